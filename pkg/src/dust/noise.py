"""Noise-realization estimation and nominal model identification.

Both estimation routes produce the same realization matrix

    Xi_hat = X1T (I - S^+ S),

the maximum-likelihood solution of the consistency-constrained problem, which
also coincides with the residual of the least-squares model fit.  The
disturbance covariance estimate is the sample covariance (1/T) Xi Xi^T.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import PersistencyError
from .lti import Dataset, check_pe
from .linalg import pseudo_inverse

__all__ = [
    "EstimationMethod",
    "ModelSource",
    "NoiseEstimate",
    "IdentifiedModel",
    "mle_estimate",
    "ce_estimate",
    "identify_model",
    "save_noise_estimate",
]


class EstimationMethod(Enum):
    MLE = "MLE"
    CE = "CE"


class ModelSource(Enum):
    CE = "CE"
    FROM_NOISE_ESTIMATE = "FromNoiseEstimate"


@dataclass(frozen=True)
class NoiseEstimate:
    """Estimated realization matrix (n x T) and disturbance covariance.

    ``degenerate`` flags a numerically singular covariance estimate (always
    the case when the disturbance channel count is below the state dimension);
    the closed-form matrices are still returned and downstream bounds only
    need the largest eigenvalue.
    """

    Xi_hat: np.ndarray
    Sigma_xi_hat: np.ndarray
    method: EstimationMethod
    degenerate: bool = False

    @property
    def T(self) -> int:
        return self.Xi_hat.shape[1]

    def residual_norm(self, dataset: Dataset) -> float:
        """Consistency residual ||(X1T - Xi_hat)(I - S^+ S)||_F."""
        S = dataset.S
        proj = np.eye(dataset.T) - pseudo_inverse(S) @ S
        return float(np.linalg.norm((dataset.X1T - self.Xi_hat) @ proj))


def _estimate(dataset: Dataset, method: EstimationMethod) -> NoiseEstimate:
    if not check_pe(dataset):
        raise PersistencyError("dataset is not persistently exciting (rank(S) < n + m)")
    S = dataset.S
    proj = np.eye(dataset.T) - pseudo_inverse(S) @ S
    Xi = dataset.X1T @ proj
    Sigma = (Xi @ Xi.T) / dataset.T
    Sigma = 0.5 * (Sigma + Sigma.T)
    eigs = np.linalg.eigvalsh(Sigma)
    degenerate = bool(eigs[0] <= max(dataset.n, dataset.T) * np.finfo(float).eps * max(eigs[-1], 0.0))
    return NoiseEstimate(Xi_hat=Xi, Sigma_xi_hat=Sigma, method=method, degenerate=degenerate)


def mle_estimate(dataset: Dataset) -> NoiseEstimate:
    """Closed-form constrained maximum-likelihood noise estimate.

    Requires a persistently exciting dataset.  A singular covariance estimate
    is allowed but flagged via ``degenerate`` (the log-likelihood itself is
    undefined there, the stationary-point formulas are not).
    """
    return _estimate(dataset, EstimationMethod.MLE)


def ce_estimate(dataset: Dataset) -> NoiseEstimate:
    """Certainty-equivalence route: identify a model by least squares, then
    read the noise off the fit residual.  Numerically identical realization
    to :func:`mle_estimate`; only the method tag differs."""
    return _estimate(dataset, EstimationMethod.CE)


@dataclass(frozen=True)
class IdentifiedModel:
    """Nominal (B_hat, A_hat) from the data, [B A] = (X1T - Xi) S^+."""

    B_hat: np.ndarray
    A_hat: np.ndarray
    source: ModelSource

    @property
    def n(self) -> int:
        return self.A_hat.shape[0]

    @property
    def m(self) -> int:
        return self.B_hat.shape[1]


def identify_model(dataset: Dataset, estimate: NoiseEstimate | None = None) -> IdentifiedModel:
    """Least-squares nominal model, optionally corrected by a noise estimate.

    With ``estimate=None`` this is the plain subspace predictor X1T S^+.
    Passing the MLE/CE estimate changes nothing (its realization is orthogonal
    to S^+), but passing the true noise realization recovers (B, A) exactly
    on persistently exciting data.
    """
    if not check_pe(dataset):
        raise PersistencyError("dataset is not persistently exciting (rank(S) < n + m)")
    X1 = dataset.X1T if estimate is None else dataset.X1T - estimate.Xi_hat
    BA = X1 @ pseudo_inverse(dataset.S)
    m = dataset.m
    source = ModelSource.CE if estimate is None else ModelSource.FROM_NOISE_ESTIMATE
    return IdentifiedModel(B_hat=BA[:, :m], A_hat=BA[:, m:], source=source)


def save_noise_estimate(estimate: NoiseEstimate, dataset: Dataset, path_prefix: str | Path) -> tuple[Path, Path]:
    """Write `<prefix>.csv` (the realization matrix) and a JSON sidecar with
    {method, sigma_xi_hat row-major, T, residual_norm}."""
    prefix = Path(path_prefix)
    csv_path = prefix.with_suffix(".csv")
    json_path = prefix.with_suffix(".json")
    lines = ["row,col,value"]
    for (r, c), v in np.ndenumerate(estimate.Xi_hat):
        lines.append(f"{r},{c},{v!r}")
    csv_path.write_text("\n".join(lines) + "\n")
    sidecar = {
        "method": estimate.method.value,
        "sigma_xi_hat": [float(v) for v in estimate.Sigma_xi_hat.reshape(-1)],
        "T": estimate.T,
        "residual_norm": estimate.residual_norm(dataset),
        "degenerate": estimate.degenerate,
    }
    json_path.write_text(json.dumps(sidecar, indent=2) + "\n")
    return csv_path, json_path
