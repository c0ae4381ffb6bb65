"""Mean steering: nominal QP and the robust history-feedback program.

The nominal problem drives the mean of the state from mu_i to mu_f through
the identified model, as an equality-constrained QP.  The robust variant
optimizes over closed-loop response maps (Phi_x, Phi_u) constrained to the
affine subspace

    [I - Z calA, -Z calB] [Phi_x; Phi_u] = I,

and guards every polyhedral row with a norm margin driven by two stacked
spectral-norm constraints with radii tied to hyperparameters (tau, gamma).
The pair (tau, gamma) multiplies decision variables, so both are fixed per
grid point and the program is re-solved over a small grid; the controller is
recovered as L = Phi_u Phi_x^{-1} by block forward substitution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import cvxpy as cp
import numpy as np

from . import conic
from .conic import ConicProgram, ConicSolution, SolveStatus
from .errors import DimensionError, PersistencyError, StructureError
from .lti import Dataset
from .linalg import psd_sqrt, sigma_min
from .noise import IdentifiedModel
from .bounds import UncertaintyBound

__all__ = [
    "MeanProblem",
    "MeanSolution",
    "solve_nominal",
    "solve_robust_sls",
    "RobustMeanTemplate",
    "recover_controller",
    "model_error_radius",
    "sls_operators",
    "response_from_controller",
    "propagate_history_feedback",
    "default_tau_grid",
    "default_gamma_grid",
]

#: Stacked-norm radius convention. "appendix" uses radii (tau, gamma), which is
#: what the robustness chain actually needs; "theorem" halves both.
DEFAULT_RADIUS_CONVENTION = "appendix"

_DEF_TAUS = (0.1, 0.3, 0.5, 0.7, 0.9)
_DEF_GAMMA_MULTS = (0.5, 1.0, 2.0, 4.0, 8.0)


def _per_step(M, N: int, n: int, name: str) -> np.ndarray:
    """Normalize a per-step weight spec (single matrix or sequence) to (N, n, n)."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 2:
        if M.shape != (n, n):
            raise DimensionError(f"{name} must be {n}x{n}, got {M.shape}")
        return np.repeat(M[None, :, :], N, axis=0)
    if M.shape != (N, n, n):
        raise DimensionError(f"{name} must be ({N},{n},{n}), got {M.shape}")
    return M


@dataclass(frozen=True)
class MeanProblem:
    """Mean-steering problem data.

    ``terminal_box`` is the halfwidth vector h of the robust terminal set
    {x : |x_i - mu_f_i| <= h_i}; ``eps_A``/``eps_B`` are the model-error radii
    used only by the robust solver.  ``state_box``/``input_box`` are optional
    (F, b) polyhedra applied at every transient step.
    """

    N: int
    Q: np.ndarray  # (n,n) or (N+1,n,n)
    R: np.ndarray  # (m,m) or (N+1,m,m)
    mu_i: np.ndarray
    mu_f: np.ndarray
    x_ref: np.ndarray | None = None  # (N+1, n); defaults to zero
    terminal_box: np.ndarray | None = None  # halfwidths, length n
    state_box: tuple[np.ndarray, np.ndarray] | None = None  # (F_x, b_x)
    input_box: tuple[np.ndarray, np.ndarray] | None = None  # (F_u, b_u)
    eps_A: float = 0.0
    eps_B: float = 0.0

    def __post_init__(self):
        if self.N < 1:
            raise DimensionError("N must be >= 1")
        mu_i = np.asarray(self.mu_i, dtype=float).reshape(-1)
        mu_f = np.asarray(self.mu_f, dtype=float).reshape(-1)
        object.__setattr__(self, "mu_i", mu_i)
        object.__setattr__(self, "mu_f", mu_f)
        n = mu_i.shape[0]
        if mu_f.shape[0] != n:
            raise DimensionError("mu_i and mu_f disagree on n")
        Q = np.asarray(self.Q, dtype=float)
        R = np.asarray(self.R, dtype=float)
        object.__setattr__(self, "Q", _per_step(Q, self.N + 1, n, "Q"))
        m = R.shape[-1]
        object.__setattr__(self, "R", _per_step(R, self.N + 1, m, "R"))
        for Rk in self.R:
            if np.linalg.eigvalsh(0.5 * (Rk + Rk.T))[0] <= 1e-10:
                raise DimensionError("R_k must be positive definite")
        if self.x_ref is not None:
            xr = np.asarray(self.x_ref, dtype=float)
            if xr.shape != (self.N + 1, n):
                raise DimensionError(f"x_ref must be ({self.N + 1},{n})")
            object.__setattr__(self, "x_ref", xr)
        if self.terminal_box is not None:
            h = np.asarray(self.terminal_box, dtype=float).reshape(-1)
            if h.shape[0] != n:
                raise DimensionError("terminal_box halfwidth length must be n")
            object.__setattr__(self, "terminal_box", h)

    @property
    def n(self) -> int:
        return self.mu_i.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[-1]

    def reference(self) -> np.ndarray:
        return np.zeros((self.N + 1, self.n)) if self.x_ref is None else self.x_ref


@dataclass(frozen=True)
class MeanSolution:
    """Nominal mean/feedforward trajectories plus, in robust mode, the system
    responses and the recovered history-feedback gain."""

    mu_bar: np.ndarray  # (N+1, n)
    v_bar: np.ndarray  # (N, m) nominal / (N+1, m) robust
    cost: float
    status: SolveStatus
    Phi_x: np.ndarray | None = None
    Phi_u: np.ndarray | None = None
    L: np.ndarray | None = None
    hyper: tuple[float, float, float] | None = None  # (tau, gamma, alpha)
    grid_statuses: tuple = ()


def sls_operators(A_hat: np.ndarray, B_hat: np.ndarray, N: int):
    """Block operators (Z, calA, calB) of the augmented closed-loop identity.

    Z is the block-downshift; calA/calB replicate the model on the first N
    diagonal blocks, leaving the final block row inert.
    """
    n, m = A_hat.shape[0], B_hat.shape[1]
    mask = np.zeros((N + 1, N + 1))
    mask[np.arange(N), np.arange(N)] = 1.0
    calA = np.kron(mask, A_hat)
    calB = np.kron(mask, B_hat)
    shift = np.zeros((N + 1, N + 1))
    shift[np.arange(1, N + 1), np.arange(N)] = 1.0
    Z = np.kron(shift, np.eye(n))
    return Z, calA, calB


def subspace_residual(Phi_x: np.ndarray, Phi_u: np.ndarray, A_hat: np.ndarray, B_hat: np.ndarray, N: int) -> float:
    Z, calA, calB = sls_operators(A_hat, B_hat, N)
    n = A_hat.shape[0]
    lhs = (np.eye((N + 1) * n) - Z @ calA) @ Phi_x - Z @ calB @ Phi_u
    return float(np.linalg.norm(lhs - np.eye((N + 1) * n)))


def response_from_controller(L: np.ndarray, A: np.ndarray, B: np.ndarray, N: int) -> np.ndarray:
    """Phi_x achieved by the history-feedback gain L on the model (A, B)."""
    Z, calA, calB = sls_operators(A, B, N)
    n = A.shape[0]
    return np.linalg.inv(np.eye((N + 1) * n) - Z @ (calA + calB @ L))


def propagate_history_feedback(L: np.ndarray, A: np.ndarray, B: np.ndarray, mu0: np.ndarray, N: int) -> np.ndarray:
    """Mean trajectory (N+1, n) under v_k = sum_i L_{k,i} mu_i on model (A, B)."""
    n, m = A.shape[0], B.shape[1]
    mu = np.zeros((N + 1, n))
    mu[0] = mu0
    for k in range(N):
        vk = np.zeros(m)
        for i in range(k + 1):
            vk += L[k * m : (k + 1) * m, i * n : (i + 1) * n] @ mu[i]
        mu[k + 1] = A @ mu[k] + B @ vk
    return mu


def model_error_radius(bound: UncertaintyBound, dataset: Dataset) -> float:
    """Model-error radius rho / sigma_min(S) implied by a noise-error bound."""
    smin = sigma_min(dataset.S)
    if smin <= max(dataset.S.shape) * np.finfo(float).eps * max(np.linalg.norm(dataset.S, 2), 1.0):
        raise PersistencyError("sigma_min(S) is zero; dataset fails persistency of excitation")
    return float(bound.rho / smin)


# -- nominal QP ---------------------------------------------------------------


def solve_nominal(
    problem: MeanProblem,
    model: IdentifiedModel,
    terminal: str = "equality",
    tol: float = 1e-9,
) -> MeanSolution:
    """Equality-constrained mean-steering QP through the conic module.

    ``terminal`` selects the boundary handling: "equality" pins mu_N = mu_f,
    "box" relaxes it to |mu_N - mu_f| <= terminal_box (used to compare
    against the robust program in its zero-uncertainty limit).
    """
    n, m, N = problem.n, problem.m, problem.N
    if model.A_hat.shape != (n, n) or model.B_hat.shape != (n, m):
        raise DimensionError("model dimensions do not match problem")
    prog = ConicProgram()
    mu = prog.add_variable("mu", n, N + 1)
    v = prog.add_variable("v", m, N)
    xr = problem.reference()
    for k in range(N):
        prog.add_eq(mu[:, k + 1] - model.A_hat @ mu[:, k] - model.B_hat @ v[:, k])
        prog.add_quad_cost(psd_sqrt(problem.Q[k]) @ (mu[:, k] - xr[k]))
        prog.add_quad_cost(psd_sqrt(problem.R[k]) @ v[:, k])
    prog.add_eq(mu[:, 0] - problem.mu_i)
    if terminal == "equality":
        prog.add_eq(mu[:, N] - problem.mu_f)
    elif terminal == "box":
        if problem.terminal_box is None:
            raise ValueError("terminal='box' requires terminal_box halfwidths")
        h = problem.terminal_box
        for i in range(n):
            prog.add_soc(cp.reshape(mu[i, N] - problem.mu_f[i], (1,), order="F"), cp.Constant(h[i]))
    else:
        raise ValueError(f"unknown terminal mode {terminal!r}")
    sol = conic.solve(prog, tol=tol)
    if sol.status is not SolveStatus.OPTIMAL:
        return MeanSolution(
            mu_bar=np.zeros((N + 1, n)),
            v_bar=np.zeros((N, m)),
            cost=float("nan"),
            status=sol.status,
        )
    return MeanSolution(mu_bar=sol["mu"].T, v_bar=sol["v"].T.reshape(N, m), cost=sol.objective_value, status=sol.status)


# -- robust program -----------------------------------------------------------


def default_tau_grid() -> tuple[float, ...]:
    return _DEF_TAUS


def default_gamma_grid(problem: MeanProblem) -> tuple[float, ...]:
    """Gamma grid scaled to the stacked-norm quantity the constraint bounds.

    The natural size of the gamma-side norm is O(eps), so the grid spans
    {0.5, 1, 2, 4, 8} times the larger model-error radius.  With zero radii
    every entry is zero and the robust program collapses onto the nominal
    box-constrained problem.
    """
    eps = max(problem.eps_A, problem.eps_B)
    return tuple(g * eps for g in _DEF_GAMMA_MULTS)


def _geometric_factor(tau: float, N: int) -> float:
    if abs(1.0 - tau) < 1e-12:
        return float(N)
    return float((1.0 - tau**N) / (1.0 - tau))


class RobustMeanTemplate:
    """Parametrized robust mean program, canonicalized once and re-solved.

    The template fixes (N, n, m, mu_i, mu_f sign pattern, box structure) and
    exposes the model, the error radii and the (tau, gamma) grid point as
    cvxpy parameters, which makes Monte Carlo sweeps cheap on one core.
    """

    def __init__(self, problem: MeanProblem, radius_convention: str | None = None, alpha: float = 0.5):
        if problem.terminal_box is None:
            raise ValueError("robust mode requires terminal_box halfwidths")
        if np.any(problem.terminal_box <= 0):
            raise DimensionError("terminal_box halfwidths must be positive in robust mode")
        if not (0.0 < alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1)")
        self.problem = problem
        self.alpha = alpha
        self.convention = radius_convention or DEFAULT_RADIUS_CONVENTION
        if self.convention not in ("appendix", "theorem"):
            raise ValueError("radius_convention must be 'appendix' or 'theorem'")
        n, m, N = problem.n, problem.m, problem.N
        self.n, self.m, self.N = n, m, N

        self.A_hat = cp.Parameter((n, n), name="A_hat")
        self.B_hat = cp.Parameter((n, m), name="B_hat")
        self.w_eps_a = cp.Parameter(nonneg=True, name="eps_a_over_alpha")
        self.w_eps_b = cp.Parameter(nonneg=True, name="eps_b_over_one_minus_alpha")
        self.tau_radius = cp.Parameter(nonneg=True, name="tau_radius")
        self.gamma_radius = cp.Parameter(nonneg=True, name="gamma_radius")
        self.margin_coeff = cp.Parameter(nonneg=True, name="margin_coeff")  # c(tau) * gamma

        prog = ConicProgram()
        self.prog = prog
        mu0 = problem.mu_i

        # response blocks: Phi_x has identity diagonal and variable strictly
        # lower blocks; Phi_u is block lower triangular including the diagonal
        self.phi_x = [[None] * (N + 1) for _ in range(N + 1)]
        self.phi_u = [[None] * (N + 1) for _ in range(N + 1)]
        eye_n = np.eye(n)
        for i in range(N + 1):
            for j in range(i + 1):
                if j == i:
                    self.phi_x[i][j] = cp.Constant(eye_n)
                else:
                    self.phi_x[i][j] = prog.add_variable(f"phix_{i}_{j}", n, n)
                self.phi_u[i][j] = prog.add_variable(f"phiu_{i}_{j}", m, n)

        # affine subspace: row i equals A phi_x[i-1] + B phi_u[i-1] + delta_ij I
        for i in range(1, N + 1):
            for j in range(i):
                rhs = self.A_hat @ self.phi_x[i - 1][j] + self.B_hat @ self.phi_u[i - 1][j]
                prog.add_eq(self.phi_x[i][j] - rhs)

        # cost on the nominal response to mu_0 (augmented, includes step N)
        for k in range(N + 1):
            prog.add_quad_cost(psd_sqrt(problem.Q[k]) @ (self.phi_x[k][0] @ mu0))
            prog.add_quad_cost(psd_sqrt(problem.R[k]) @ (self.phi_u[k][0] @ mu0))

        # polyhedral rows with norm margins
        self._add_rows(prog, mu0)

        # stacked spectral-norm constraints tying (tau, gamma) to the responses
        x_rows_w = []
        u_rows_w = []
        zero_nn = np.zeros((n, n))
        zero_mn = np.zeros((m, n))
        for i in range(N + 1):
            xr = [self.phi_x[i][j] if j <= i else cp.Constant(zero_nn) for j in range(1, N + 1)]
            ur = [self.phi_u[i][j] if j <= i else cp.Constant(zero_mn) for j in range(1, N + 1)]
            x_rows_w.append(cp.hstack(xr))
            u_rows_w.append(cp.hstack(ur))
        stacked_w = cp.vstack(
            [self.w_eps_a * cp.vstack(x_rows_w), self.w_eps_b * cp.vstack(u_rows_w)]
        )
        conic.spectral_norm_leq(prog, stacked_w, self.tau_radius)

        x0_col = cp.vstack([self.phi_x[i][0] for i in range(N + 1)])
        u0_col = cp.vstack([self.phi_u[i][0] for i in range(N + 1)])
        stacked_0 = cp.vstack([self.w_eps_a * x0_col, self.w_eps_b * u0_col])
        conic.spectral_norm_leq(prog, stacked_0, self.gamma_radius)

    def _add_rows(self, prog: ConicProgram, mu0: np.ndarray) -> None:
        """Rows F_j [mu; v] <= b_j with margin c(tau) gamma ||F_j Phi^w||."""
        n, m, N = self.n, self.m, self.N
        p = self.problem
        rows: list[tuple[int, np.ndarray, float, bool]] = []  # (block step, selector, rhs, is_input)
        for i in range(n):
            e = np.zeros(n)
            e[i] = 1.0
            rows.append((N, e, p.mu_f[i] + p.terminal_box[i], False))
            rows.append((N, -e, -p.mu_f[i] + p.terminal_box[i], False))
        if p.state_box is not None:
            Fx, bx = p.state_box
            for k in range(1, N):
                for r in range(Fx.shape[0]):
                    rows.append((k, Fx[r], float(bx[r]), False))
        if p.input_box is not None:
            Fu, bu = p.input_box
            for k in range(N):
                for r in range(Fu.shape[0]):
                    rows.append((k, Fu[r], float(bu[r]), True))
        for step, f, b, is_input in rows:
            blocks = self.phi_u[step] if is_input else self.phi_x[step]
            nominal = f @ (blocks[0] @ mu0)
            wides = [blocks[j] for j in range(1, step + 1)]
            if wides:
                row_vec = cp.hstack([f @ blk for blk in wides])
                # margin_coeff * ||F_j Phi^w|| <= b_j - F_j Phi^0 mu_0
                prog.add_soc(self.margin_coeff * row_vec, cp.Constant(b) - nominal)
            else:
                prog.add_soc(cp.Constant(np.zeros(1)), cp.Constant(b) - nominal)

    # -- solving ---------------------------------------------------------------

    def set_model(self, model: IdentifiedModel, eps_A: float, eps_B: float) -> None:
        self.A_hat.value = model.A_hat
        self.B_hat.value = model.B_hat
        self.w_eps_a.value = eps_A / self.alpha
        self.w_eps_b.value = eps_B / (1.0 - self.alpha)

    def solve_grid_point(self, tau: float, gamma: float, tol: float = 1e-6) -> ConicSolution:
        if not (0.0 < tau < 1.0):
            raise ValueError("tau must lie in (0, 1)")
        half = 0.5 if self.convention == "theorem" else 1.0
        self.tau_radius.value = half * tau
        self.gamma_radius.value = half * gamma
        self.margin_coeff.value = _geometric_factor(tau, self.N) * gamma
        return conic.solve(self.prog, tol=tol)

    def extract(self, sol: ConicSolution, tau: float, gamma: float) -> MeanSolution:
        n, m, N = self.n, self.m, self.N
        Phi_x = np.zeros(((N + 1) * n, (N + 1) * n))
        Phi_u = np.zeros(((N + 1) * m, (N + 1) * n))
        for i in range(N + 1):
            for j in range(i + 1):
                if j == i:
                    Phi_x[i * n : (i + 1) * n, j * n : (j + 1) * n] = np.eye(n)
                else:
                    Phi_x[i * n : (i + 1) * n, j * n : (j + 1) * n] = sol[f"phix_{i}_{j}"]
                Phi_u[i * m : (i + 1) * m, j * n : (j + 1) * n] = sol[f"phiu_{i}_{j}"]
        L = recover_controller(Phi_x, Phi_u, n=n, m=m)
        mu0 = self.problem.mu_i
        mu_bar = (Phi_x[:, :n] @ mu0).reshape(N + 1, n)
        v_bar = (Phi_u[:, :n] @ mu0).reshape(N + 1, m)
        return MeanSolution(
            mu_bar=mu_bar,
            v_bar=v_bar,
            cost=sol.objective_value,
            status=SolveStatus.OPTIMAL,
            Phi_x=Phi_x,
            Phi_u=Phi_u,
            L=L,
            hyper=(tau, gamma, self.alpha),
        )


def solve_robust_sls(
    problem: MeanProblem,
    model: IdentifiedModel,
    tau_grid: Sequence[float] | None = None,
    gamma_grid: Sequence[float] | None = None,
    alpha: float = 0.5,
    radius_convention: str | None = None,
    tol: float = 1e-6,
    feasibility_only: bool = False,
    template: RobustMeanTemplate | None = None,
) -> MeanSolution:
    """Grid search over (tau, gamma) for the robust mean-steering program.

    Solves the convex program at every grid point (both hyperparameters
    multiply decision variables, so they cannot be optimized jointly) and
    returns the feasible solution of minimum cost; ties break toward smaller
    tau, then smaller gamma.  ``feasibility_only=True`` short-circuits at the
    first feasible point, which is what the Monte Carlo sweeps need.

    Preconditions: ``eps_A``/``eps_B`` set on the problem (zero is allowed and
    collapses the robust terms), ``terminal_box`` set.
    """
    if tau_grid is None:
        tau_grid = default_tau_grid()
    if gamma_grid is None:
        gamma_grid = default_gamma_grid(problem)
    tmpl = template or RobustMeanTemplate(problem, radius_convention=radius_convention, alpha=alpha)
    tmpl.set_model(model, problem.eps_A, problem.eps_B)

    # visit cheap margins first so feasibility short-circuits quickly
    points = sorted(
        ((float(t), float(g)) for t in tau_grid for g in gamma_grid),
        key=lambda tg: (_geometric_factor(tg[0], tmpl.N) * tg[1], tg[0], tg[1]),
    )
    best: MeanSolution | None = None
    statuses = []
    for tau, gamma in points:
        sol = tmpl.solve_grid_point(tau, gamma, tol=tol)
        statuses.append((tau, gamma, sol.status.value))
        if sol.status is SolveStatus.OPTIMAL:
            cand = tmpl.extract(sol, tau, gamma)
            if best is None or cand.cost < best.cost - 1e-12 or (
                abs(cand.cost - best.cost) <= 1e-12 and (tau, gamma) < best.hyper[:2]
            ):
                best = cand
            if feasibility_only:
                break
    if best is None:
        return MeanSolution(
            mu_bar=np.zeros((problem.N + 1, problem.n)),
            v_bar=np.zeros((problem.N + 1, problem.m)),
            cost=float("inf"),
            status=SolveStatus.INFEASIBLE,
            grid_statuses=tuple(statuses),
        )
    return MeanSolution(
        mu_bar=best.mu_bar,
        v_bar=best.v_bar,
        cost=best.cost,
        status=best.status,
        Phi_x=best.Phi_x,
        Phi_u=best.Phi_u,
        L=best.L,
        hyper=best.hyper,
        grid_statuses=tuple(statuses),
    )


def recover_controller(Phi_x: np.ndarray, Phi_u: np.ndarray, n: int | None = None, m: int | None = None) -> np.ndarray:
    """History-feedback gain L = Phi_u Phi_x^{-1} by block forward substitution.

    Requires Phi_x block lower triangular with identity diagonal blocks; the
    inverse inherits that structure, so L is block lower triangular.  The
    block size is inferred from the leading identity rows when not given.
    """
    Phi_x = np.asarray(Phi_x, dtype=float)
    Phi_u = np.asarray(Phi_u, dtype=float)
    if n is None:
        # first block row of a unit block-lower-triangular matrix is [I 0 ... 0]
        size_ = Phi_x.shape[0]
        eye_rows = np.eye(size_)
        n = 0
        while n < size_ and np.allclose(Phi_x[n], eye_rows[n], atol=1e-9):
            n += 1
        if n == 0 or size_ % n != 0:
            raise StructureError("could not infer block size; pass n explicitly")
    size = Phi_x.shape[0]
    if size % n != 0:
        raise StructureError("Phi_x row count is not a multiple of n")
    blocks = size // n
    scale = 1.0 + float(np.abs(Phi_x).max())
    for i in range(blocks):
        di = Phi_x[i * n : (i + 1) * n, i * n : (i + 1) * n]
        if np.abs(di - np.eye(n)).max() > 1e-6 * scale:
            raise StructureError(f"diagonal block {i} of Phi_x is not the identity")
        for j in range(i + 1, blocks):
            if np.abs(Phi_x[i * n : (i + 1) * n, j * n : (j + 1) * n]).max() > 1e-8 * scale:
                raise StructureError("Phi_x is not block lower triangular")
    # X = Phi_x^{-1} by forward substitution on block columns
    X = np.zeros_like(Phi_x)
    for j in range(blocks):
        X[j * n : (j + 1) * n, j * n : (j + 1) * n] = np.eye(n)
        for i in range(j + 1, blocks):
            acc = np.zeros((n, n))
            for k in range(j, i):
                acc += Phi_x[i * n : (i + 1) * n, k * n : (k + 1) * n] @ X[k * n : (k + 1) * n, j * n : (j + 1) * n]
            X[i * n : (i + 1) * n, j * n : (j + 1) * n] = -acc
    return Phi_u @ X
