"""Density steering under multiplicative data-noise uncertainty.

Instead of estimating the noise realization and robustifying against its
error, this route keeps the collection noise as a Gaussian object: the exact
data-driven model [B A] = (X1T - Xi) S^+ makes the model error a linear image
of Xi, whose distribution is known.  Propagating second moments through that
representation couples the mean and covariance designs; the coupling terms
are convexified with per-sample multipliers and the whole problem is solved
as one SDP.

The column partition S^+ = [S1 S2] (T x m and T x n) defines the rank-one
error sums Delta_B = -Xi S1, Delta_A = -Xi S2; tau_i / sigma_i below are the
rows of S1 / S2.
"""

from __future__ import annotations

from dataclasses import dataclass

import cvxpy as cp
import numpy as np

from . import conic
from .conic import ConicProgram, SolveStatus
from .errors import DimensionError, GainRecoveryError, PersistencyError
from .lti import Dataset, check_pe
from .linalg import psd_sqrt, pseudo_inverse, sym
from .mean_steering import _per_step

__all__ = ["PUProblem", "PUSolution", "solve_pu", "recover_pu_controller"]


@dataclass(frozen=True)
class PUProblem:
    """Coupled mean/covariance steering data with known disturbance covariance."""

    N: int
    Q: np.ndarray
    R: np.ndarray
    mu_i: np.ndarray
    mu_f: np.ndarray
    Sigma_i: np.ndarray
    Sigma_f: np.ndarray
    sigma_xi: np.ndarray

    def __post_init__(self):
        if self.N < 1:
            raise DimensionError("N must be >= 1")
        mu_i = np.asarray(self.mu_i, dtype=float).reshape(-1)
        mu_f = np.asarray(self.mu_f, dtype=float).reshape(-1)
        object.__setattr__(self, "mu_i", mu_i)
        object.__setattr__(self, "mu_f", mu_f)
        n = mu_i.shape[0]
        for name in ("Sigma_i", "Sigma_f", "sigma_xi"):
            M = sym(np.asarray(getattr(self, name), dtype=float))
            if M.shape != (n, n):
                raise DimensionError(f"{name} must be {n}x{n}")
            object.__setattr__(self, name, M)
        for name in ("Sigma_i", "Sigma_f"):
            if np.linalg.eigvalsh(getattr(self, name))[0] <= 1e-10:
                raise DimensionError(f"{name} must be positive definite")
        object.__setattr__(self, "Q", _per_step(np.asarray(self.Q, dtype=float), self.N, n, "Q"))
        m = np.asarray(self.R, dtype=float).shape[-1]
        object.__setattr__(self, "R", _per_step(np.asarray(self.R, dtype=float), self.N, m, "R"))

    @property
    def n(self) -> int:
        return self.mu_i.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[-1]


@dataclass(frozen=True)
class PUSolution:
    mu: np.ndarray  # (N+1, n)
    v: np.ndarray  # (N, m)
    Sigma: np.ndarray  # (N+1, n, n)
    U: np.ndarray  # (N, m, n), U_k = K_k Sigma_k
    Y: np.ndarray  # (N, m, m)
    Sigma_delta: np.ndarray  # (N, T, n, n) per-sample coupling blocks
    K: np.ndarray | None  # (N, m, n)
    cost: float
    status: SolveStatus


def solve_pu(problem: PUProblem, dataset: Dataset, tol: float = 1e-7) -> PUSolution:
    """Solve the parametric-uncertainty steering SDP.

    Preconditions: persistently exciting dataset and sigma_xi positive
    definite (its inverse appears in the coupling constraints).  The terminal
    covariance enters as Sigma_N <= Sigma_f; the terminal mean as an equality
    on the nominal (certainty-equivalence) mean dynamics.
    """
    if not check_pe(dataset):
        raise PersistencyError("dataset is not persistently exciting")
    n, m, N, T = problem.n, problem.m, problem.N, dataset.T
    if np.linalg.eigvalsh(problem.sigma_xi)[0] <= 1e-12:
        raise ValueError("sigma_xi must be positive definite for the coupling constraints")

    Sdag = pseudo_inverse(dataset.S)  # T x (m+n)
    S1, S2 = Sdag[:, :m], Sdag[:, m:]
    BA = dataset.X1T @ Sdag
    B_hat, A_hat = BA[:, :m], BA[:, m:]
    P11 = S1.T @ S1  # m x m
    P21 = S1.T @ S2  # m x n  (pairs tau_i with sigma_i)
    P22 = S2.T @ S2  # n x n
    Sxi = problem.sigma_xi

    prog = ConicProgram()
    MU = prog.add_variable("mu", n, N + 1)
    V = prog.add_variable("v", m, N)
    Sig = [prog.add_variable(f"Sigma_{k}", n, n, symmetric=True) for k in range(N + 1)]
    U = [prog.add_variable(f"U_{k}", m, n) for k in range(N)]
    Y = [prog.add_variable(f"Y_{k}", m, m, symmetric=True) for k in range(N)]
    dvar = prog.add_variable("d", T, N)  # d_ik >= (sigma_i' mu_k + tau_i' v_k)^2

    prog.add_eq(MU[:, 0] - problem.mu_i)
    prog.add_eq(MU[:, N] - problem.mu_f)
    prog.add_eq(Sig[0] - problem.Sigma_i)
    prog.add_psd(cp.Constant(problem.Sigma_f) - Sig[N])

    # scalar couplings s_ik for every data sample i and step k;
    # d_ik >= s_ik^2 batched as ||[2 s_ik; d_ik - 1]|| <= d_ik + 1
    smat = S2 @ MU[:, :N] + S1 @ V  # T x N
    dflat = cp.reshape(dvar, (T * N,), order="F")
    sflat = cp.reshape(smat, (T * N,), order="F")
    prog.add_soc_batch(dflat + 1.0, cp.vstack([2.0 * sflat, dflat - 1.0]))

    for k in range(N):
        prog.add_quad_cost(psd_sqrt(problem.Q[k]) @ MU[:, k])
        prog.add_quad_cost(psd_sqrt(problem.R[k]) @ V[:, k])
        prog.add_linear_cost(cp.trace(problem.Q[k] @ Sig[k]) + cp.trace(problem.R[k] @ Y[k]))
        prog.add_eq(MU[:, k + 1] - A_hat @ MU[:, k] - B_hat @ V[:, k])
        # covariance propagation with nominal, spread and mean-coupling terms
        nominal = (
            A_hat @ Sig[k] @ A_hat.T
            + A_hat @ U[k].T @ B_hat.T
            + B_hat @ U[k] @ A_hat.T
            + B_hat @ Y[k] @ B_hat.T
            + Sxi
        )
        spread = cp.trace(P22 @ Sig[k]) + 2.0 * cp.sum(cp.multiply(P21, U[k])) + cp.trace(P11 @ Y[k])
        coupling = cp.sum(dvar[:, k])
        prog.add_eq(Sig[k + 1] - nominal - (spread + coupling) * Sxi)
        prog.add_psd(cp.bmat([[Y[k], U[k]], [U[k].T, Sig[k]]]))

    sol = conic.solve(prog, tol=tol)
    if sol.status is not SolveStatus.OPTIMAL:
        z = float("inf") if sol.status is SolveStatus.INFEASIBLE else float("nan")
        return PUSolution(
            mu=np.zeros((N + 1, n)),
            v=np.zeros((N, m)),
            Sigma=np.zeros((N + 1, n, n)),
            U=np.zeros((N, m, n)),
            Y=np.zeros((N, m, m)),
            Sigma_delta=np.zeros((N, T, n, n)),
            K=None,
            cost=z,
            status=sol.status,
        )
    mu = sol["mu"].T
    v = sol["v"].T.reshape(N, m)
    Sigma = np.stack([sym(sol[f"Sigma_{k}"]) for k in range(N + 1)])
    Uv = np.stack([sol[f"U_{k}"] for k in range(N)])
    Yv = np.stack([sym(sol[f"Y_{k}"]) for k in range(N)])
    dval = sol["d"].reshape(T, N)
    Sigma_delta = np.einsum("ik,ab->kiab", dval, Sxi)
    K = recover_pu_controller_gains(Uv, Sigma)
    return PUSolution(mu=mu, v=v, Sigma=Sigma, U=Uv, Y=Yv, Sigma_delta=Sigma_delta, K=K, cost=sol.objective_value, status=sol.status)


def recover_pu_controller_gains(U: np.ndarray, Sigma: np.ndarray, eig_floor: float = 1e-9) -> np.ndarray:
    N = U.shape[0]
    K = np.empty_like(U)
    for k in range(N):
        w, Vec = np.linalg.eigh(sym(Sigma[k]))
        if w[0] < eig_floor:
            raise GainRecoveryError(k, f"Sigma_k eigenvalue {w[0]:.3e} below {eig_floor:.0e}")
        K[k] = U[k] @ (Vec / np.clip(w, 1e-12, None)) @ Vec.T
    return K


def recover_pu_controller(solution: PUSolution) -> tuple[np.ndarray, np.ndarray]:
    """Gains K_k = U_k Sigma_k^{-1} and the feedforward sequence."""
    K = solution.K if solution.K is not None else recover_pu_controller_gains(solution.U, solution.Sigma)
    return K, solution.v
