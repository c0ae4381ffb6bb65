"""Covariance steering from data: nominal SDP and its robust counterpart.

The nominal program optimizes over per-step covariances Sigma_k and the
data-space variables S_k (= G_k Sigma_k), with the covariance propagation
relaxed into the 2n x 2n linear matrix inequality

    [[Sigma_{k+1} - Sigma_xi,  (X1T - Xi) S_k],
     [S_k^T (X1T - Xi)^T,      Sigma_k      ]]  >= 0.

The control-effort term tr(R U0T Y_k U0T^T) with Y_k >= S_k Sigma_k^{-1} S_k^T
is folded into an equivalent (n+m) epigraph block over V_k = R^(1/2) U0T S_k,
which keeps the per-step cone sizes independent of the data horizon T; the
minimal Y_k = S_k Sigma_k^{-1} S_k^T is materialized on return, so the
reported solution satisfies the original inequalities verbatim.

The robust counterpart replaces each propagation LMI with the augmented
(T + 2n) LMI carrying a scalar multiplier lambda_k, which certifies the
original LMI for every ||Delta_Xi|| <= rho.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import cvxpy as cp
import numpy as np

from . import conic
from .conic import ConicProgram, ConicSolution, SolveStatus
from .errors import DimensionError, GainRecoveryError, PersistencyError
from .lti import Dataset, check_pe
from .linalg import psd_sqrt, sym
from .noise import NoiseEstimate
from .bounds import UncertaintyBound

__all__ = [
    "TerminalMode",
    "CovProblem",
    "CovSolution",
    "solve_nominal_cs",
    "solve_robust_cs",
    "RobustCovTemplate",
    "recover_gains",
]


class TerminalMode(Enum):
    EQUALITY = "Equality"
    UPPER_BOUND = "UpperBound"


def _per_step_w(M, N: int, name: str) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim == 2:
        return np.repeat(M[None, :, :], N, axis=0)
    if M.shape[0] != N:
        raise DimensionError(f"{name} must have {N} step entries")
    return M


@dataclass(frozen=True)
class CovProblem:
    """Covariance boundary-value problem data."""

    N: int
    Q: np.ndarray
    R: np.ndarray
    Sigma_i: np.ndarray
    Sigma_f: np.ndarray
    terminal_mode: TerminalMode = TerminalMode.EQUALITY

    def __post_init__(self):
        if self.N < 1:
            raise DimensionError("N must be >= 1")
        Si = sym(np.asarray(self.Sigma_i, dtype=float))
        Sf = sym(np.asarray(self.Sigma_f, dtype=float))
        object.__setattr__(self, "Sigma_i", Si)
        object.__setattr__(self, "Sigma_f", Sf)
        for name, M in (("Sigma_i", Si), ("Sigma_f", Sf)):
            if np.linalg.eigvalsh(M)[0] <= 1e-10:
                raise DimensionError(f"{name} must be positive definite")
        object.__setattr__(self, "Q", _per_step_w(self.Q, self.N, "Q"))
        object.__setattr__(self, "R", _per_step_w(self.R, self.N, "R"))

    @property
    def n(self) -> int:
        return self.Sigma_i.shape[0]


@dataclass(frozen=True)
class CovSolution:
    Sigma: np.ndarray  # (N+1, n, n)
    S: np.ndarray  # (N, T, n)
    Y: np.ndarray  # (N, T, T), materialized minimal relaxation variables
    K: np.ndarray | None  # (N, m, n) recovered gains
    lam: np.ndarray | None  # (N,) robust multipliers
    cost: float
    status: SolveStatus

    @property
    def N(self) -> int:
        return self.S.shape[0]


class RobustCovTemplate:
    """Parametrized covariance program; one canonicalization, many solves.

    The dataset blocks, the noise estimate and the radius rho are cvxpy
    parameters.  ``rho = 0`` reduces the robust LMI to the nominal one, so a
    single template serves both entry points.
    """

    def __init__(self, problem: CovProblem, T: int, m: int, robust: bool = True):
        self.problem = problem
        self.T, self.m, self.robust = T, m, robust
        n, N = problem.n, problem.N
        self.n, self.N = n, N

        self.G_param = cp.Parameter((n, T), name="X1_minus_Xi")
        self.X0_param = cp.Parameter((n, T), name="X0T")
        self.Wh_params = [cp.Parameter((m, T), name=f"R_half_U0T_{k}") for k in range(N)]
        self.Sig_xi = cp.Parameter((n, n), name="Sigma_xi", symmetric=True)
        self.rho = cp.Parameter(nonneg=True, name="rho")

        prog = ConicProgram()
        self.prog = prog
        Sig = [prog.add_variable(f"Sigma_{k}", n, n, symmetric=True) for k in range(N + 1)]
        S = [prog.add_variable(f"S_{k}", T, n) for k in range(N)]
        Theta = [prog.add_variable(f"Theta_{k}", m, m, symmetric=True) for k in range(N)]
        lam = prog.add_variable("lam", N) if robust else None

        RtR = np.zeros((2 * n, 2 * n))
        RtR[:n, :n] = np.eye(n)
        for k in range(N):
            prog.add_linear_cost(cp.trace(problem.Q[k] @ Sig[k]) + cp.trace(Theta[k]))
            # effort epigraph: Theta_k >= V Sigma_k^{-1} V^T, V = R^(1/2) U0T S_k
            V = self.Wh_params[k] @ S[k]
            prog.add_psd(cp.bmat([[Sig[k], V.T], [V, Theta[k]]]))
            Ghat = cp.bmat(
                [
                    [Sig[k + 1] - self.Sig_xi, self.G_param @ S[k]],
                    [(self.G_param @ S[k]).T, Sig[k]],
                ]
            )
            if robust:
                Lmat = cp.hstack([np.zeros((T, n)), -S[k]])
                big = cp.bmat(
                    [
                        [lam[k] * np.eye(T), self.rho * Lmat],
                        [(self.rho * Lmat).T, Ghat - lam[k] * RtR],
                    ]
                )
                prog.add_psd(big)
            else:
                prog.add_psd(Ghat)
            prog.add_eq(self.X0_param @ S[k] - Sig[k])
        prog.add_eq(Sig[0] - problem.Sigma_i)
        if problem.terminal_mode is TerminalMode.EQUALITY:
            prog.add_eq(Sig[N] - problem.Sigma_f)
        else:
            prog.add_psd(cp.Constant(problem.Sigma_f) - Sig[N])

    def set_data(self, dataset: Dataset, estimate: NoiseEstimate, rho: float) -> None:
        if dataset.T != self.T:
            raise DimensionError("dataset horizon does not match template")
        self.G_param.value = dataset.X1T - estimate.Xi_hat
        self.X0_param.value = dataset.X0T
        for k in range(self.N):
            self.Wh_params[k].value = psd_sqrt(self.problem.R[k]) @ dataset.U0T
        self.Sig_xi.value = sym(estimate.Sigma_xi_hat)
        self.rho.value = float(rho)

    def solve(self, tol: float = 1e-7) -> ConicSolution:
        return conic.solve(self.prog, tol=tol)

    def extract(self, sol: ConicSolution) -> CovSolution:
        N, T, n = self.N, self.T, self.n
        Sigma = np.stack([sym(sol[f"Sigma_{k}"]) for k in range(N + 1)])
        S = np.stack([sol[f"S_{k}"] for k in range(N)])
        Y = np.empty((N, T, T))
        for k in range(N):
            Y[k] = S[k] @ np.linalg.solve(Sigma[k], S[k].T)
            Y[k] = sym(Y[k])
        lam = sol["lam"].reshape(-1) if self.robust else None
        return CovSolution(Sigma=Sigma, S=S, Y=Y, K=None, lam=lam, cost=sol.objective_value, status=sol.status)


def _solve_cov(
    problem: CovProblem,
    dataset: Dataset,
    estimate: NoiseEstimate,
    rho: float,
    robust: bool,
    tol: float,
    template: RobustCovTemplate | None,
) -> CovSolution:
    if not check_pe(dataset):
        raise PersistencyError("dataset is not persistently exciting")
    if estimate.Xi_hat.shape != dataset.X1T.shape:
        raise DimensionError("noise estimate does not match dataset dimensions")
    tmpl = template or RobustCovTemplate(problem, dataset.T, dataset.m, robust=robust)
    tmpl.set_data(dataset, estimate, rho)
    sol = tmpl.solve(tol=tol)
    if sol.status is not SolveStatus.OPTIMAL:
        N, T, n = problem.N, dataset.T, problem.n
        return CovSolution(
            Sigma=np.zeros((N + 1, n, n)),
            S=np.zeros((N, T, n)),
            Y=np.zeros((N, T, T)),
            K=None,
            lam=None,
            cost=float("inf") if sol.status is SolveStatus.INFEASIBLE else float("nan"),
            status=sol.status,
        )
    out = tmpl.extract(sol)
    K = recover_gains(out, dataset)
    return CovSolution(Sigma=out.Sigma, S=out.S, Y=out.Y, K=K, lam=out.lam, cost=out.cost, status=out.status)


def solve_nominal_cs(
    problem: CovProblem,
    dataset: Dataset,
    estimate: NoiseEstimate,
    tol: float = 1e-7,
    template: RobustCovTemplate | None = None,
) -> CovSolution:
    """Nominal data-driven covariance steering with the estimate plugged in."""
    return _solve_cov(problem, dataset, estimate, rho=0.0, robust=False, tol=tol, template=template)


def solve_robust_cs(
    problem: CovProblem,
    dataset: Dataset,
    estimate: NoiseEstimate,
    bound: UncertaintyBound,
    tol: float = 1e-7,
    template: RobustCovTemplate | None = None,
) -> CovSolution:
    """Robust counterpart: every propagation LMI holds for ||Delta_Xi|| <= rho.

    With rho = 0 the augmented LMI collapses to the nominal one and the
    solution matches :func:`solve_nominal_cs` to solver tolerance.
    """
    if bound.rho < 0:
        raise ValueError("bound radius must be nonnegative")
    return _solve_cov(problem, dataset, estimate, rho=bound.rho, robust=True, tol=tol, template=template)


def recover_gains(solution: CovSolution, dataset: Dataset, eig_floor: float = 1e-9) -> np.ndarray:
    """Feedback gains K_k = U0T S_k Sigma_k^{-1}.

    Sigma_k is inverted through its eigendecomposition; steps whose smallest
    eigenvalue falls below ``eig_floor`` are rejected rather than regularized.
    """
    N = solution.N
    m = dataset.m
    K = np.empty((N, m, solution.Sigma.shape[-1]))
    for k in range(N):
        w, V = np.linalg.eigh(sym(solution.Sigma[k]))
        if w[0] < eig_floor:
            raise GainRecoveryError(k, f"Sigma_k eigenvalue {w[0]:.3e} below {eig_floor:.0e}")
        inv = (V / np.clip(w, 1e-12, None)) @ V.T
        K[k] = dataset.U0T @ solution.S[k] @ inv
    return K
