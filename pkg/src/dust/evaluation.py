"""Closed-loop Monte Carlo evaluation and the feasibility/quantile tables.

Rollouts are vectorized over trials (one generator per evaluation, seeded),
so the harness stays usable on a single core.  Sweep cells re-solve one
parametrized conic template rather than rebuilding programs per trial.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .bounds import UncertaintyBound, empirical_error_norms, loose_bound, tight_bound
from .conic import SolveStatus
from .cov_steering import CovProblem, RobustCovTemplate, TerminalMode
from .errors import DimensionError
from .lti import Dataset, GaussianState, LinearSystem, collect_dataset, derive_trial_seed
from .linalg import sigma_min, sym
from .mean_steering import MeanProblem, RobustMeanTemplate, solve_robust_sls
from .noise import identify_model, mle_estimate

__all__ = [
    "ControllerKind",
    "Controller",
    "RolloutStats",
    "run_closed_loop",
    "Table2Spec",
    "Table3Spec",
    "SweepResult",
    "feasibility_sweep",
    "QuantileStudySpec",
    "quantile_study",
    "write_table_csv",
]


class ControllerKind(Enum):
    AFFINE_STATE_FEEDBACK = "AffineStateFeedback"
    HISTORY_FEEDBACK = "HistoryFeedback"


@dataclass(frozen=True)
class Controller:
    """Either per-step affine state feedback (K_k, v_k, mu_k) or one
    block-lower-triangular history-feedback gain L."""

    kind: ControllerKind
    N: int
    K: np.ndarray | None = None  # (N, m, n)
    v: np.ndarray | None = None  # (N, m)
    mu: np.ndarray | None = None  # (N+1, n)
    L: np.ndarray | None = None  # ((N+1)m, (N+1)n)

    def __post_init__(self):
        if self.kind is ControllerKind.AFFINE_STATE_FEEDBACK:
            if self.K is None or self.v is None or self.mu is None:
                raise DimensionError("affine controller needs K, v and mu")
            if self.K.shape[0] != self.N or self.v.shape[0] != self.N or self.mu.shape[0] != self.N + 1:
                raise DimensionError("controller sequence lengths must equal N")
        else:
            if self.L is None:
                raise DimensionError("history-feedback controller needs L")


@dataclass(frozen=True)
class RolloutStats:
    emp_mean: np.ndarray
    emp_cov: np.ndarray
    terminal_in_box_rate: float | None
    cov_violation: float | None
    trials: int


def run_closed_loop(
    system: LinearSystem,
    controller: Controller,
    x0: GaussianState,
    trials: int,
    seed: int,
    terminal_box: tuple[np.ndarray, np.ndarray] | None = None,
    sigma_f: np.ndarray | None = None,
) -> RolloutStats:
    """Simulate `trials` independent closed-loop rollouts and aggregate the
    terminal sample moments (unbiased covariance).

    ``terminal_box`` is an optional (center, halfwidth) pair for the in-box
    rate; ``sigma_f`` an optional target covariance for the violation metric.
    """
    if trials < 2:
        raise ValueError("need at least 2 trials for an unbiased covariance")
    rng = np.random.default_rng(seed)
    N = controller.N
    n, m, d = system.n, system.m, system.d
    x = x0.sample(rng, size=trials)  # (trials, n)
    w = rng.standard_normal((N, trials, d))
    At, Bt, Dt = system.A.T, system.B.T, system.D.T
    if controller.kind is ControllerKind.AFFINE_STATE_FEEDBACK:
        for k in range(N):
            u = (x - controller.mu[k]) @ controller.K[k].T + controller.v[k]
            x = x @ At + u @ Bt + w[k] @ Dt
    else:
        hist = [x]
        for k in range(N):
            u = np.zeros((trials, m))
            for i in range(k + 1):
                Lki = controller.L[k * m : (k + 1) * m, i * n : (i + 1) * n]
                u += hist[i] @ Lki.T
            x = x @ At + u @ Bt + w[k] @ Dt
            hist.append(x)
    emp_mean = x.mean(axis=0)
    emp_cov = np.cov(x, rowvar=False, ddof=1).reshape(n, n)
    emp_cov = sym(emp_cov)
    rate = None
    if terminal_box is not None:
        center, half = terminal_box
        rate = float(np.mean(np.all(np.abs(x - center) <= half, axis=1)))
    violation = None
    if sigma_f is not None:
        violation = float(np.linalg.eigvalsh(emp_cov - sigma_f)[-1])
    return RolloutStats(emp_mean=emp_mean, emp_cov=emp_cov, terminal_in_box_rate=rate, cov_violation=violation, trials=trials)


# -- feasibility sweeps --------------------------------------------------------


def worker_count() -> int:
    """Worker cap from DUST_THREADS (defaults to the visible CPU count)."""
    env = os.environ.get("DUST_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


@dataclass(frozen=True)
class SweepResult:
    rows: tuple
    cols: tuple
    fractions: np.ndarray  # feasible fraction per cell
    failures: np.ndarray  # numerical-failure fraction per cell (also counted infeasible)
    trials: int

    def as_records(self):
        recs = []
        for i, r in enumerate(self.rows):
            for j, c in enumerate(self.cols):
                recs.append((r, c, float(self.fractions[i, j]), float(self.failures[i, j])))
        return recs


@dataclass(frozen=True)
class Table2Spec:
    """Robust mean-steering feasibility sweep over (model-error level, box halfwidth).

    ``eps_mapping`` chooses how a row level alpha becomes the program's model
    error radius: "scaled" divides by sigma_min(S) of the trial's dataset
    (treating alpha as a noise-error radius, converted exactly like
    :func:`dust.mean_steering.model_error_radius`), "direct" uses alpha as is.
    """

    system: LinearSystem
    alphas: tuple = (0.05, 0.1, 0.15, 0.2, 0.25)
    widths: tuple = (0.5, 0.4, 0.3, 0.2, 0.1, 0.05)
    trials: int = 500
    seed: int = 0
    T: int = 30
    N: int = 10
    mu_i: tuple = (2.0, 10.0)
    Q_scale: float = 1.0
    R_scale: float = 10.0
    eps_mapping: str = "scaled"
    tau_grid: tuple | None = None
    gamma_grid: tuple | None = None
    alpha_split: float = 0.5
    radius_convention: str | None = None


@dataclass(frozen=True)
class Table3Spec:
    """Robust covariance-steering feasibility sweep over (rho, sigma_xi^2)."""

    rhos: tuple = (0.0, 0.3, 0.6, 0.9, 1.2, 1.5)
    sigma_xi_sqs: tuple = (0.1**2, 0.12**2, 0.14**2, 0.16**2)
    trials: int = 500
    seed: int = 0
    T: int = 30
    N: int = 10
    sigma_i_scale: float = (1.0 / 3.0) ** 2
    sigma_f_ratio: float = 0.25
    Q_scale: float = 1.0
    R_scale: float = 10.0
    terminal_mode: TerminalMode = TerminalMode.EQUALITY


def _sweep_table2(spec: Table2Spec) -> SweepResult:
    sysm = spec.system
    n, m = sysm.n, sysm.m
    x0s = GaussianState(mean=np.zeros(n), cov=np.eye(n))
    mu_i = np.array(spec.mu_i, dtype=float)
    # one dataset per trial reused across all cells
    datasets = []
    for t in range(spec.trials):
        ds = collect_dataset(sysm, spec.T, x0s, -1.0, 1.0, seed=derive_trial_seed(spec.seed, t))
        model = identify_model(ds)
        datasets.append((model, sigma_min(ds.S)))
    fractions = np.zeros((len(spec.alphas), len(spec.widths)))
    failures = np.zeros_like(fractions)
    for j, width in enumerate(spec.widths):
        problem = MeanProblem(
            N=spec.N,
            Q=spec.Q_scale * np.eye(n),
            R=spec.R_scale * np.eye(m),
            mu_i=mu_i,
            mu_f=np.zeros(n),
            terminal_box=width * np.ones(n),
            eps_A=1.0,  # placeholder, set per trial through the template
            eps_B=1.0,
        )
        template = RobustMeanTemplate(problem, radius_convention=spec.radius_convention, alpha=spec.alpha_split)
        for i, alpha in enumerate(spec.alphas):
            ok = fail = 0
            for model, smin in datasets:
                eps = alpha / smin if spec.eps_mapping == "scaled" else alpha
                prob_t = MeanProblem(
                    N=spec.N,
                    Q=spec.Q_scale * np.eye(n),
                    R=spec.R_scale * np.eye(m),
                    mu_i=mu_i,
                    mu_f=np.zeros(n),
                    terminal_box=width * np.ones(n),
                    eps_A=eps,
                    eps_B=eps,
                )
                sol = solve_robust_sls(
                    prob_t,
                    model,
                    tau_grid=spec.tau_grid,
                    gamma_grid=spec.gamma_grid,
                    alpha=spec.alpha_split,
                    feasibility_only=True,
                    template=template,
                    tol=1e-6,
                )
                if sol.status is SolveStatus.OPTIMAL:
                    ok += 1
                elif sol.status is SolveStatus.NUMERICAL_FAILURE:
                    fail += 1
            fractions[i, j] = ok / spec.trials
            failures[i, j] = fail / spec.trials
    return SweepResult(rows=tuple(spec.alphas), cols=tuple(spec.widths), fractions=fractions, failures=failures, trials=spec.trials)


def _sweep_table3(spec: Table3Spec) -> SweepResult:
    n = 2
    Sigma_i = spec.sigma_i_scale * np.eye(n)
    Sigma_f = spec.sigma_f_ratio * Sigma_i
    problem = CovProblem(
        N=spec.N,
        Q=spec.Q_scale * np.eye(n),
        R=spec.R_scale * np.eye(n),
        Sigma_i=Sigma_i,
        Sigma_f=Sigma_f,
        terminal_mode=spec.terminal_mode,
    )
    x0s = GaussianState(mean=np.zeros(n), cov=np.eye(n))
    template = RobustCovTemplate(problem, T=spec.T, m=n, robust=True)
    fractions = np.zeros((len(spec.rhos), len(spec.sigma_xi_sqs)))
    failures = np.zeros_like(fractions)
    from .lti import paper_system

    base = paper_system()
    for j, s2 in enumerate(spec.sigma_xi_sqs):
        sysm = LinearSystem(A=base.A, B=base.B, D=np.sqrt(s2) * np.eye(n))
        # fresh data per trial, shared across the rho rows of this column
        col_cases = []
        for t in range(spec.trials):
            ds = collect_dataset(sysm, spec.T, x0s, -1.0, 1.0, seed=derive_trial_seed(spec.seed, j * spec.trials + t))
            col_cases.append((ds, mle_estimate(ds)))
        for i, rho in enumerate(spec.rhos):
            ok = fail = 0
            for ds, est in col_cases:
                template.set_data(ds, est, rho)
                sol = template.solve(tol=1e-6)
                if sol.status is SolveStatus.OPTIMAL:
                    ok += 1
                elif sol.status is SolveStatus.NUMERICAL_FAILURE:
                    fail += 1
            fractions[i, j] = ok / spec.trials
            failures[i, j] = fail / spec.trials
    return SweepResult(rows=tuple(spec.rhos), cols=tuple(spec.sigma_xi_sqs), fractions=fractions, failures=failures, trials=spec.trials)


def feasibility_sweep(spec: Table2Spec | Table3Spec) -> SweepResult:
    """Fraction of trials whose robust program returns Optimal, per grid cell.

    Numerical failures count as infeasible and are reported separately in
    ``failures``.  Cells are deterministic functions of (spec, seed).
    """
    if isinstance(spec, Table2Spec):
        return _sweep_table2(spec)
    if isinstance(spec, Table3Spec):
        return _sweep_table3(spec)
    raise TypeError(f"unknown sweep spec {type(spec)!r}")


# -- quantile study ------------------------------------------------------------


@dataclass(frozen=True)
class QuantileStudySpec:
    system: LinearSystem
    deltas: tuple = (0.1, 0.2, 0.3, 0.4, 0.5)
    T_emp: int = 10
    T_loose: tuple = (10, 100)
    trials: int = 100_000
    seed: int = 0


def quantile_study(spec: QuantileStudySpec) -> list[dict]:
    """Empirical error quantiles next to the analytic radii, one row per delta."""
    if spec.trials < 10_000:
        raise ValueError("quantile study needs at least 1e4 trials")
    norms = empirical_error_norms(spec.system, spec.T_emp, spec.trials, spec.seed)
    sigma_xi = spec.system.sigma_xi
    n, m = spec.system.n, spec.system.m
    rows = []
    for delta in spec.deltas:
        row = {
            "delta": delta,
            "rho_star": float(np.quantile(norms, 1.0 - delta)),
            "tight": tight_bound(n, m, delta, sigma_xi).rho,
        }
        for T in spec.T_loose:
            row[f"loose_T{T}"] = loose_bound(n, T, delta, sigma_xi).rho
        rows.append(row)
    return rows


# -- emitters ------------------------------------------------------------------


def write_table_csv(path: str | Path, header: list[str], rows: list) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
    return path
