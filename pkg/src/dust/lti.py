"""Stochastic LTI simulation, dataset collection and Hankel machinery.

A dataset is one input/state trajectory of

    x_{k+1} = A x_k + B u_k + D w_k,     w_k ~ N(0, I_d),

rearranged into the depth-1 Hankel blocks ``U0T``, ``X0T``, ``X1T`` and the
stacked data matrix ``S = [U0T; X0T]``.  All sampling is seeded and
reproducible: identical arguments give bitwise-identical results, and
per-trial seeds are derived as ``seed ^ trial_index`` so Monte Carlo studies
can be sharded without coordination.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError
from .linalg import is_symmetric, matrix_rank, pseudo_inverse, psd_sqrt, sigma_min

__all__ = [
    "LinearSystem",
    "GaussianState",
    "Trajectory",
    "Dataset",
    "simulate",
    "collect_dataset",
    "collect_with_trajectory",
    "hankel",
    "check_pe",
    "check_alpha_pe",
    "derive_trial_seed",
    "paper_system",
    "save_dataset",
    "load_dataset",
]


def derive_trial_seed(seed: int, trial_index: int) -> int:
    """Per-trial seed: ``seed ^ trial_index`` (distinct within one study)."""
    return int(seed) ^ int(trial_index)


@dataclass(frozen=True)
class LinearSystem:
    """Ground-truth or estimated triple (A, B, D) with dimensions (n, m, d)."""

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "D", D)
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise DimensionError(f"B has {B.shape[0]} rows, expected {n}")
        if D.shape[0] != n:
            raise DimensionError(f"D has {D.shape[0]} rows, expected {n}")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def d(self) -> int:
        return self.D.shape[1]

    @property
    def sigma_xi(self) -> np.ndarray:
        """Disturbance covariance D D^T."""
        return self.D @ self.D.T

    def is_controllable(self) -> bool:
        """rank [B, AB, ..., A^(n-1)B] == n."""
        blocks = [self.B]
        for _ in range(self.n - 1):
            blocks.append(self.A @ blocks[-1])
        return matrix_rank(np.hstack(blocks)) == self.n


@dataclass(frozen=True)
class GaussianState:
    """Gaussian state distribution N(mean, cov); cov symmetric PSD."""

    mean: np.ndarray
    cov: np.ndarray
    psd_tol: float = 1e-10

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        n = mean.shape[0]
        if cov.shape != (n, n):
            raise DimensionError(f"cov shape {cov.shape} does not match mean dim {n}")
        if not is_symmetric(cov, tol=1e-8):
            raise DimensionError("cov is not symmetric to tolerance")
        if float(np.linalg.eigvalsh(cov)[0]) < -self.psd_tol:
            raise DimensionError("cov has eigenvalues below -psd_tol")

    @property
    def n(self) -> int:
        return self.mean.shape[0]

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Draw via mean + cov^(1/2) z with z standard normal."""
        root = psd_sqrt(self.cov)
        if size is None:
            return self.mean + root @ rng.standard_normal(self.n)
        return self.mean + rng.standard_normal((size, self.n)) @ root.T


@dataclass(frozen=True)
class Trajectory:
    """Raw simulated trajectory; the noise sequence is retained for oracle
    tests only and never flows into the estimation or control algorithms."""

    states: np.ndarray  # (T+1, n)
    inputs: np.ndarray  # (T, m)
    noises: np.ndarray  # (T, d)

    @property
    def T(self) -> int:
        return self.inputs.shape[0]

    def realized_disturbances(self, D: np.ndarray) -> np.ndarray:
        """xi_k = D w_k stacked as an n x T matrix."""
        return (self.noises @ np.asarray(D, dtype=float).T).T


@dataclass(frozen=True)
class Dataset:
    """Hankel blocks of one collected trajectory plus the stacked matrix S."""

    U0T: np.ndarray  # m x T
    X0T: np.ndarray  # n x T
    X1T: np.ndarray  # n x T
    T: int
    seed: int
    d: int | None = None  # disturbance channel count, for serialization only
    _S: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        U0T = np.atleast_2d(np.asarray(self.U0T, dtype=float))
        X0T = np.atleast_2d(np.asarray(self.X0T, dtype=float))
        X1T = np.atleast_2d(np.asarray(self.X1T, dtype=float))
        object.__setattr__(self, "U0T", U0T)
        object.__setattr__(self, "X0T", X0T)
        object.__setattr__(self, "X1T", X1T)
        if not (U0T.shape[1] == X0T.shape[1] == X1T.shape[1] == self.T):
            raise DimensionError("U0T/X0T/X1T must all have T columns")
        if X0T.shape[0] != X1T.shape[0]:
            raise DimensionError("X0T and X1T must have the same row count")
        object.__setattr__(self, "_S", np.vstack([U0T, X0T]))

    @property
    def S(self) -> np.ndarray:
        """Stacked data matrix [U0T; X0T], shape (m+n) x T."""
        return self._S

    @property
    def n(self) -> int:
        return self.X0T.shape[0]

    @property
    def m(self) -> int:
        return self.U0T.shape[0]


def paper_system() -> LinearSystem:
    """Two-state benchmark system used throughout the experiment defaults."""
    A = 0.5 * np.array([[1.0, -1.0], [2.0, 1.0]])
    return LinearSystem(A=A, B=np.eye(2), D=0.1 * np.eye(2))


def simulate(
    system: LinearSystem,
    x0: np.ndarray,
    inputs: np.ndarray,
    seed: int,
) -> Trajectory:
    """Roll the stochastic recurrence forward under a given input sequence.

    Parameters
    ----------
    system : the (A, B, D) triple.
    x0 : initial state, length n.
    inputs : (T, m) array (or sequence of m-vectors), T >= 1.
    seed : generator seed; the noise draws are a pure function of it.

    Returns a :class:`Trajectory` satisfying
    ``states[k+1] = A states[k] + B inputs[k] + D noises[k]`` exactly.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.shape[0] == 1 and system.m == 1 and inputs.shape[1] != 1:
        inputs = inputs.T
    T = inputs.shape[0]
    if T < 1:
        raise DimensionError("need at least one input")
    if x0.shape[0] != system.n:
        raise DimensionError(f"x0 has dim {x0.shape[0]}, expected {system.n}")
    if inputs.shape[1] != system.m:
        raise DimensionError(f"inputs have dim {inputs.shape[1]}, expected {system.m}")

    rng = np.random.default_rng(seed)
    noises = rng.standard_normal((T, system.d))
    states = np.empty((T + 1, system.n))
    states[0] = x0
    for k in range(T):
        states[k + 1] = system.A @ states[k] + system.B @ inputs[k] + system.D @ noises[k]
    return Trajectory(states=states, inputs=inputs, noises=noises)


def collect_with_trajectory(
    system: LinearSystem,
    T: int,
    x0_sampler: GaussianState,
    input_lo: float = -1.0,
    input_hi: float = 1.0,
    seed: int = 0,
) -> tuple[Dataset, Trajectory]:
    """Collect a dataset and also return the underlying trajectory.

    The trajectory (with its true noise sequence) exists for oracle checks;
    estimation and control code must consume only the :class:`Dataset`.
    """
    if T < 1:
        raise DimensionError("T must be >= 1")
    if input_lo > input_hi:
        raise ValueError("input_lo must not exceed input_hi")
    # independent streams for the initial draw block and the process noise
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & ((1 << 63) - 1), 0x1D]))
    x0 = x0_sampler.sample(rng)
    inputs = rng.uniform(input_lo, input_hi, size=(T, system.m))
    sim_seed = int(np.random.SeedSequence([int(seed) & ((1 << 63) - 1), 0x2E]).generate_state(1)[0])
    traj = simulate(system, x0, inputs, seed=sim_seed)
    ds = Dataset(
        U0T=traj.inputs.T.copy(),
        X0T=traj.states[:-1].T.copy(),
        X1T=traj.states[1:].T.copy(),
        T=T,
        seed=int(seed),
        d=system.d,
    )
    return ds, traj


def collect_dataset(
    system: LinearSystem,
    T: int,
    x0_sampler: GaussianState,
    input_lo: float = -1.0,
    input_hi: float = 1.0,
    seed: int = 0,
) -> Dataset:
    """Collect one T-long excitation experiment with i.i.d. uniform inputs."""
    ds, _ = collect_with_trajectory(system, T, x0_sampler, input_lo, input_hi, seed)
    return ds


def hankel(signal: np.ndarray, depth: int) -> np.ndarray:
    """Block Hankel matrix of a vector signal.

    ``signal`` is (length, sigma); block (i, c) of the result equals
    ``signal[i + c]``, so the output is (sigma*depth) x (length - depth + 1).
    """
    signal = np.atleast_2d(np.asarray(signal, dtype=float))
    if signal.shape[0] == 1 and signal.shape[1] > 1:
        signal = signal.T  # scalar signal given as a flat row
    length, sigma = signal.shape
    if depth < 1:
        raise DimensionError("depth must be >= 1")
    if depth > length:
        raise DimensionError(f"depth {depth} exceeds signal length {length}")
    j = length - depth + 1
    out = np.empty((sigma * depth, j))
    for i in range(depth):
        out[i * sigma : (i + 1) * sigma, :] = signal[i : i + j].T
    return out


def check_pe(dataset: Dataset) -> bool:
    """Full-row-rank test rank(S) == n + m with SVD truncation tolerance."""
    return matrix_rank(dataset.S) == dataset.n + dataset.m


def check_alpha_pe(inputs: np.ndarray, order: int, alpha: float) -> bool:
    """Quantitative excitation test: sigma_min of the depth-`order` input
    Hankel matrix is at least ``alpha``.

    Requires T >= order*(m+1) - 1 so the Hankel matrix is wide enough for the
    rank condition to be meaningful.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.shape[0] == 1 and inputs.shape[1] > 1:
        inputs = inputs.T
    T, m = inputs.shape
    if T < order * (m + 1) - 1:
        raise DimensionError(f"need T >= order*(m+1)-1 = {order * (m + 1) - 1}, got {T}")
    H = hankel(inputs, order)
    return sigma_min(H) >= alpha


def pe_residual(dataset: Dataset, xi_true: np.ndarray) -> float:
    """Frobenius norm of (X1T - Xi)(I - S^+ S); zero for consistent data."""
    S = dataset.S
    proj = np.eye(dataset.T) - pseudo_inverse(S) @ S
    return float(np.linalg.norm((dataset.X1T - xi_true) @ proj))


# -- serialization -----------------------------------------------------------

_CSV_HEADER = "kind,row,col,value"


def save_dataset(dataset: Dataset, path_prefix: str | Path) -> tuple[Path, Path]:
    """Write `<prefix>.csv` (kind,row,col,value rows) and `<prefix>.json`.

    The sidecar records {n, m, d, T, seed}; values are emitted with full
    float repr so a round trip is bitwise exact.
    """
    prefix = Path(path_prefix)
    csv_path = prefix.with_suffix(".csv")
    json_path = prefix.with_suffix(".json")
    lines = [_CSV_HEADER]
    for kind, M in (("U0T", dataset.U0T), ("X0T", dataset.X0T), ("X1T", dataset.X1T)):
        for (r, c), v in np.ndenumerate(M):
            lines.append(f"{kind},{r},{c},{v!r}")
    csv_path.write_text("\n".join(lines) + "\n")
    sidecar = {
        "n": dataset.n,
        "m": dataset.m,
        "d": dataset.d if dataset.d is not None else dataset.n,
        "T": dataset.T,
        "seed": dataset.seed,
    }
    json_path.write_text(json.dumps(sidecar, indent=2) + "\n")
    return csv_path, json_path


def load_dataset(path_prefix: str | Path) -> Dataset:
    """Inverse of :func:`save_dataset`."""
    prefix = Path(path_prefix)
    meta = json.loads(prefix.with_suffix(".json").read_text())
    n, m, T = meta["n"], meta["m"], meta["T"]
    blocks = {"U0T": np.zeros((m, T)), "X0T": np.zeros((n, T)), "X1T": np.zeros((n, T))}
    body = prefix.with_suffix(".csv").read_text().strip().splitlines()
    if body[0] != _CSV_HEADER:
        raise ValueError(f"unexpected header {body[0]!r}")
    for line in body[1:]:
        kind, r, c, v = line.split(",")
        blocks[kind][int(r), int(c)] = float(v)
    return Dataset(
        U0T=blocks["U0T"],
        X0T=blocks["X0T"],
        X1T=blocks["X1T"],
        T=T,
        seed=meta["seed"],
        d=meta.get("d"),
    )
