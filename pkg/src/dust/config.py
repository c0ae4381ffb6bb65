"""JSON experiment configuration: parsing, validation, paper defaults.

One JSON document drives every CLI subcommand.  All matrices are row-major
flat lists; unknown keys are rejected so typos fail loudly; seeds are
mandatory (no wall-clock entropy anywhere in the package).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import DimensionError
from .lti import LinearSystem

__all__ = ["ExperimentConfig", "load_config", "paper_default_config"]


def _mat(values, rows: int, cols: int, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.size != rows * cols:
        raise DimensionError(f"{name} needs {rows * cols} entries, got {arr.size}")
    return arr.reshape(rows, cols)


def _take(d: dict, cls_name: str, required: dict, optional: dict | None = None) -> dict:
    optional = optional or {}
    unknown = set(d) - set(required) - set(optional)
    if unknown:
        raise ValueError(f"unknown keys in {cls_name}: {sorted(unknown)}")
    missing = [k for k in required if k not in d]
    if missing:
        raise ValueError(f"missing keys in {cls_name}: {missing}")
    out = dict(optional)
    out.update({k: d[k] for k in d})
    return out


@dataclass(frozen=True)
class DataConfig:
    T: int
    input_lo: float
    input_hi: float
    seed: int


@dataclass(frozen=True)
class SteeringConfig:
    N: int
    Q: np.ndarray
    R: np.ndarray
    mu_i: np.ndarray
    Sigma_i: np.ndarray
    mu_f: np.ndarray
    Sigma_f: np.ndarray
    box_halfwidth: np.ndarray
    x_ref: np.ndarray | None = None


@dataclass(frozen=True)
class RobustConfig:
    delta: float
    bound_kind: str  # "tight" | "loose" | "empirical"
    tau_grid: tuple
    gamma_grid: tuple | None
    alpha: float
    eps_override: float | None = None


@dataclass(frozen=True)
class MonteCarloConfig:
    trials: int
    rollouts: int


@dataclass(frozen=True)
class ExperimentConfig:
    system: LinearSystem
    data: DataConfig
    steering: SteeringConfig
    robust: RobustConfig
    mc: MonteCarloConfig

    @property
    def sigma_xi_known(self) -> np.ndarray:
        return self.system.sigma_xi


def parse_config(doc: dict) -> ExperimentConfig:
    top = _take(doc, "config", {"system": None, "data": None, "steering": None, "robust": None, "mc": None})

    sysd = _take(top["system"], "system", {"A": None, "B": None, "D": None}, {"n": None, "m": None, "d": None})
    A_flat = np.asarray(sysd["A"], dtype=float)
    n = int(sysd["n"]) if sysd["n"] is not None else int(round(np.sqrt(A_flat.size)))
    if n * n != A_flat.size:
        raise DimensionError("A must be square (row-major n*n entries)")
    A = _mat(sysd["A"], n, n, "A")
    m = int(sysd["m"]) if sysd["m"] is not None else len(np.asarray(sysd["B"]).reshape(-1)) // n
    B = _mat(sysd["B"], n, m, "B")
    d = int(sysd["d"]) if sysd["d"] is not None else len(np.asarray(sysd["D"]).reshape(-1)) // n
    D = _mat(sysd["D"], n, d, "D")
    system = LinearSystem(A=A, B=B, D=D)

    dd = _take(top["data"], "data", {"T": None, "seed": None}, {"input_lo": -1.0, "input_hi": 1.0})
    data = DataConfig(T=int(dd["T"]), input_lo=float(dd["input_lo"]), input_hi=float(dd["input_hi"]), seed=int(dd["seed"]))
    if data.input_lo > data.input_hi:
        raise DimensionError("input_lo must not exceed input_hi")

    sd = _take(
        top["steering"],
        "steering",
        {"N": None, "Q": None, "R": None, "mu_i": None, "Sigma_i": None, "mu_f": None, "Sigma_f": None},
        {"box_halfwidth": 0.5, "x_ref": None},
    )
    N = int(sd["N"])
    Q = _mat(sd["Q"], n, n, "Q")
    R_flat = np.asarray(sd["R"], dtype=float)
    R = _mat(sd["R"], m, m, "R")
    mu_i = np.asarray(sd["mu_i"], dtype=float).reshape(-1)
    mu_f = np.asarray(sd["mu_f"], dtype=float).reshape(-1)
    if mu_i.size != n or mu_f.size != n:
        raise DimensionError("mu_i / mu_f must have n entries")
    Sigma_i = _mat(sd["Sigma_i"], n, n, "Sigma_i")
    Sigma_f = _mat(sd["Sigma_f"], n, n, "Sigma_f")
    bh = np.asarray(sd["box_halfwidth"], dtype=float).reshape(-1)
    if bh.size == 1:
        bh = np.full(n, bh[0])
    if bh.size != n:
        raise DimensionError("box_halfwidth must be scalar or length n")
    x_ref = None
    if sd["x_ref"] is not None:
        x_ref = _mat(sd["x_ref"], N + 1, n, "x_ref")
    steering = SteeringConfig(N=N, Q=Q, R=R, mu_i=mu_i, Sigma_i=Sigma_i, mu_f=mu_f, Sigma_f=Sigma_f, box_halfwidth=bh, x_ref=x_ref)

    rd = _take(
        top["robust"],
        "robust",
        {"delta": None},
        {"bound_kind": "tight", "eps_override": None, "tau_grid": [0.1, 0.3, 0.5, 0.7, 0.9], "gamma_grid": None, "alpha": 0.5},
    )
    robust = RobustConfig(
        delta=float(rd["delta"]),
        bound_kind=str(rd["bound_kind"]),
        tau_grid=tuple(float(t) for t in rd["tau_grid"]),
        gamma_grid=None if rd["gamma_grid"] is None else tuple(float(g) for g in rd["gamma_grid"]),
        alpha=float(rd["alpha"]),
        eps_override=None if rd["eps_override"] is None else float(rd["eps_override"]),
    )
    if not (0.0 < robust.delta <= 0.5):
        raise DimensionError("robust.delta must lie in (0, 0.5]")
    if robust.bound_kind not in ("tight", "loose", "empirical"):
        raise DimensionError(f"unknown bound_kind {robust.bound_kind!r}")

    md = _take(top["mc"], "mc", {"trials": None, "rollouts": None})
    mc = MonteCarloConfig(trials=int(md["trials"]), rollouts=int(md["rollouts"]))
    return ExperimentConfig(system=system, data=data, steering=steering, robust=robust, mc=mc)


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config(json.loads(Path(path).read_text()))


def paper_default_config() -> dict:
    """The benchmark configuration used by `reproduce` when no file is given."""
    return {
        "system": {
            "A": [0.5, -0.5, 1.0, 0.5],
            "B": [1.0, 0.0, 0.0, 1.0],
            "D": [0.1, 0.0, 0.0, 0.1],
        },
        "data": {"T": 30, "input_lo": -1.0, "input_hi": 1.0, "seed": 1234},
        "steering": {
            "N": 10,
            "Q": [1.0, 0.0, 0.0, 1.0],
            "R": [10.0, 0.0, 0.0, 10.0],
            "mu_i": [2.0, 10.0],
            "Sigma_i": [1.0 / 9.0, 0.0, 0.0, 1.0 / 9.0],
            "mu_f": [0.0, 0.0],
            "Sigma_f": [0.25 / 9.0, 0.0, 0.0, 0.25 / 9.0],
            "box_halfwidth": 0.5,
        },
        "robust": {"delta": 0.1},
        "mc": {"trials": 500, "rollouts": 1000},
    }
