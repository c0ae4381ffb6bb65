"""Solver-agnostic conic-program data model and solve contract.

A :class:`ConicProgram` collects named variable blocks, an objective made of
affine and convex-quadratic terms, affine equalities, PSD blocks and
second-order cones.  Quadratic objective terms are lowered to second-order
cone epigraphs before handoff, so the backend only ever sees a linear
objective over cones.

The actual cone solve is delegated to a pinned third-party backend through
cvxpy (CLARABEL by default, SCS as the retry path); the backend name and
version are recorded in every :class:`ConicSolution`.  Expressions are cvxpy
expressions, which also makes ``cvxpy.Parameter`` available to callers that
re-solve one program structure with fresh data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from importlib.metadata import version as _pkg_version

import cvxpy as cp
import numpy as np

__all__ = [
    "ConicProgram",
    "ConicSolution",
    "SolveStatus",
    "solve",
    "spectral_norm_leq",
    "DEFAULT_TOL",
]

DEFAULT_TOL = 1e-7

_BACKEND = "CLARABEL"
_RETRY_BACKEND = "SCS"


class SolveStatus(Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass
class _VarBlock:
    name: str
    rows: int
    cols: int
    symmetric: bool
    var: cp.Variable


@dataclass
class ConicProgram:
    """Conic model: variables, affine+quadratic objective, eq/PSD/SOC cones."""

    variables: list[_VarBlock] = field(default_factory=list)
    linear_cost: list[cp.Expression] = field(default_factory=list)
    quad_cost: list[cp.Expression] = field(default_factory=list)  # ||expr||^2 terms
    eq_constraints: list[cp.Expression] = field(default_factory=list)  # affine == 0
    psd_constraints: list[cp.Expression] = field(default_factory=list)  # sym affine >> 0
    soc_constraints: list[tuple[cp.Expression, cp.Expression]] = field(default_factory=list)
    soc_batches: list[tuple[cp.Expression, cp.Expression]] = field(default_factory=list)
    _problem: cp.Problem | None = field(default=None, repr=False)

    def add_variable(self, name: str, rows: int, cols: int = 1, symmetric: bool = False) -> cp.Variable:
        if any(b.name == name for b in self.variables):
            raise ValueError(f"duplicate variable name {name!r}")
        if symmetric:
            if rows != cols:
                raise ValueError("symmetric blocks must be square")
            var = cp.Variable((rows, cols), name=name, symmetric=True)
        elif cols == 1:
            var = cp.Variable(rows, name=name)
        else:
            var = cp.Variable((rows, cols), name=name)
        self.variables.append(_VarBlock(name, rows, cols, symmetric, var))
        self._problem = None
        return var

    def add_linear_cost(self, expr) -> None:
        self.linear_cost.append(expr)
        self._problem = None

    def add_quad_cost(self, vec_expr) -> None:
        """Add ||vec_expr||^2 to the objective (lowered to an SOC epigraph)."""
        self.quad_cost.append(cp.reshape(vec_expr, (-1,), order="F"))
        self._problem = None

    def add_eq(self, expr) -> None:
        """Require an affine expression to vanish."""
        self.eq_constraints.append(expr)
        self._problem = None

    def add_psd(self, expr) -> None:
        """Require a symmetric affine matrix expression to be PSD."""
        if getattr(expr, "ndim", 2) < 2:
            if int(np.prod(expr.shape)) != 1:
                raise ValueError("PSD constraints need a square matrix expression")
            expr = cp.reshape(expr, (1, 1), order="F")
        self.psd_constraints.append(expr)
        self._problem = None

    def add_soc(self, vec_expr, scalar_expr) -> None:
        """Require ||vec_expr||_2 <= scalar_expr."""
        self.soc_constraints.append((cp.reshape(vec_expr, (-1,), order="F"), scalar_expr))
        self._problem = None

    def add_soc_batch(self, t_vec, X) -> None:
        """Columnwise cones ||X[:, i]|| <= t_vec[i] as one vectorized block."""
        self.soc_batches.append((t_vec, X))
        self._problem = None

    def dump(self) -> str:
        """Line-oriented structural dump for diffing across implementations."""
        lines = []
        for b in self.variables:
            lines.append(f"var {b.name} {b.rows} {b.cols} {'sym' if b.symmetric else 'full'}")
        for i, e in enumerate(self.eq_constraints):
            lines.append(f"eq {i} {int(np.prod(e.shape)) if e.shape else 1}")
        for i, e in enumerate(self.psd_constraints):
            lines.append(f"psd {i} {e.shape[0]}")
        for i, (v, _) in enumerate(self.soc_constraints):
            lines.append(f"soc {i} {int(np.prod(v.shape)) if v.shape else 1}")
        for i, (t, X) in enumerate(self.soc_batches):
            lines.append(f"socbatch {i} {X.shape[0]}x{X.shape[1]}")
        lines.append(f"quadterms {len(self.quad_cost)}")
        return "\n".join(lines)

    # -- lowering ------------------------------------------------------------

    def _build(self) -> cp.Problem:
        if self._problem is not None:
            return self._problem
        cost_terms = list(self.linear_cost)
        constraints: list[cp.Constraint] = []
        for q in self.quad_cost:
            # t >= ||v||^2 as the cone ||[2v; t-1]|| <= t+1
            t = cp.Variable()
            constraints.append(cp.SOC(t + 1.0, cp.hstack([2.0 * q, cp.reshape(t - 1.0, (1,), order="F")])))
            cost_terms.append(t)
        for e in self.eq_constraints:
            constraints.append(e == 0)
        for e in self.psd_constraints:
            constraints.append(e >> 0)
        for v, s in self.soc_constraints:
            constraints.append(cp.SOC(s, v))
        for t, X in self.soc_batches:
            constraints.append(cp.SOC(t, X, axis=0))
        objective = cp.Minimize(cp.sum(cost_terms) if cost_terms else cp.Constant(0.0))
        self._problem = cp.Problem(objective, constraints)
        return self._problem


@dataclass(frozen=True)
class ConicSolution:
    values: dict[str, np.ndarray]
    status: SolveStatus
    objective_value: float
    max_residual: float
    backend: str = ""
    backend_version: str = ""

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]


def spectral_norm_leq(program: ConicProgram, M, t) -> cp.Expression:
    """Add the Schur block enforcing ||M||_2 <= t; returns the block handle.

    ``M`` is a p x q affine matrix expression, ``t`` an affine scalar; the
    added PSD constraint is [[t I_p, M], [M^T, t I_q]] >= 0.
    """
    p, q = M.shape
    block = cp.bmat([[t * np.eye(p), M], [M.T, t * np.eye(q)]])
    program.add_psd(block)
    return block


def _max_residual(program: ConicProgram) -> float:
    worst = 0.0
    for e in program.eq_constraints:
        val = np.atleast_1d(e.value)
        if val is None:
            return np.inf
        scale = 1.0 + float(np.abs(val).max()) if val.size else 1.0
        worst = max(worst, float(np.abs(val).max()) / scale if val.size else 0.0)
    for e in program.psd_constraints:
        val = e.value
        if val is None:
            return np.inf
        val = 0.5 * (val + val.T)
        lam = float(np.linalg.eigvalsh(val)[0])
        scale = 1.0 + float(np.abs(val).max())
        worst = max(worst, max(0.0, -lam) / scale)
    for v, s in program.soc_constraints:
        vv = np.atleast_1d(v.value)
        sv = float(np.atleast_1d(s.value)[0]) if not np.isscalar(s) else float(s)
        if vv is None:
            return np.inf
        gap = float(np.linalg.norm(vv)) - sv
        worst = max(worst, max(0.0, gap) / (1.0 + abs(sv)))
    for t, X in program.soc_batches:
        tv, Xv = np.atleast_1d(t.value), np.atleast_2d(X.value)
        if tv is None or Xv is None:
            return np.inf
        gaps = np.linalg.norm(Xv, axis=0) - tv
        worst = max(worst, float(np.max(np.maximum(gaps, 0.0) / (1.0 + np.abs(tv)))))
    return worst


def _solver_kwargs(backend: str, tol: float) -> dict:
    if backend == "CLARABEL":
        return {
            "tol_gap_abs": tol,
            "tol_gap_rel": tol,
            "tol_feas": tol,
            "max_iter": 200,
        }
    if backend == "SCS":
        return {"eps": max(tol, 1e-9), "max_iters": 20000}
    return {}


def solve(program: ConicProgram, tol: float = DEFAULT_TOL) -> ConicSolution:
    """Solve the program with the pinned backend.

    Status ``OPTIMAL`` implies the recomputed primal residual is within a
    small multiple of ``tol``; a solver claiming optimality with a larger
    residual is downgraded to ``NUMERICAL_FAILURE`` rather than passed
    through.  Infeasibility reflects a certificate found by the backend.
    """
    problem = program._build()
    status, backend_used = None, _BACKEND
    for backend in (_BACKEND, _RETRY_BACKEND):
        try:
            problem.solve(solver=backend, **_solver_kwargs(backend, tol))
        except (cp.SolverError, Exception):  # backend blowups count as numerical failures
            status = None
            continue
        status, backend_used = problem.status, backend
        if status in (cp.OPTIMAL, cp.INFEASIBLE, cp.UNBOUNDED):
            break
    values = {b.name: (np.array(b.var.value) if b.var.value is not None else None) for b in program.variables}

    if status == cp.OPTIMAL:
        resid = _max_residual(program)
        if resid > max(100 * tol, 5e-6):
            return ConicSolution(values, SolveStatus.NUMERICAL_FAILURE, float("nan"), resid, backend_used, _backend_version(backend_used))
        return ConicSolution(values, SolveStatus.OPTIMAL, float(problem.value), resid, backend_used, _backend_version(backend_used))
    if status == cp.INFEASIBLE:
        return ConicSolution(values, SolveStatus.INFEASIBLE, float("inf"), float("nan"), backend_used, _backend_version(backend_used))
    if status == cp.UNBOUNDED:
        return ConicSolution(values, SolveStatus.UNBOUNDED, float("-inf"), float("nan"), backend_used, _backend_version(backend_used))
    return ConicSolution(values, SolveStatus.NUMERICAL_FAILURE, float("nan"), float("nan"), backend_used, _backend_version(backend_used))


def _backend_version(backend: str) -> str:
    try:
        return _pkg_version(backend.lower())
    except Exception:
        return f"cvxpy-{cp.__version__}"
