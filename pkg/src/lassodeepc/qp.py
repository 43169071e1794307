"""Dense convex QP solver with exact active sets.

Solves::

    minimize    1/2 x' H x + f' x
    subject to  A_eq x  = b_eq
                A_in x <= b_in
                x      >= lb          (entries of lb may be -inf)

with a parametric (homotopy) active-set method. An optimal working set is
tracked while the problem data move linearly from an auxiliary problem, whose
solution is known, to the requested one. Starting from the previous working
set makes receding-horizon re-solves cheap; a cold start first finds a
feasible vertex with an elastic LP (HiGHS) and declares the problem
infeasible when the LP cannot drive the violation below ``tol_infeasible``.

Equality-constrained subproblems are solved with a null-space method (QR of
the working-set normals), which stays usable on the badly conditioned data
matrices met in data-driven control. Semidefinite Hessians are handled with
proximal-point regularization, so every inner problem is strictly convex.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog

log = logging.getLogger(__name__)

_DEP_TOL = 1e-10      # relative null-space norm below which a normal is dependent
_SINGULAR_RTOL = 1e-14  # factorization refuses working sets this close to singular
_EQ_RANK_RTOL = 1e-12


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITERATIONS = "max_iterations"


class AssumptionViolated(np.linalg.LinAlgError):
    """Working-set normals are linearly dependent."""


@dataclass(frozen=True)
class Tolerances:
    stationarity: float = 1e-8
    equality: float = 1e-8
    inequality: float = 1e-8
    complementarity: float = 1e-8
    infeasibility: float = 1e-6


@dataclass(frozen=True)
class QuadraticProgram:
    hessian: np.ndarray
    linear_cost: np.ndarray
    eq_matrix: Optional[np.ndarray] = None
    eq_rhs: Optional[np.ndarray] = None
    ineq_matrix: Optional[np.ndarray] = None
    ineq_rhs: Optional[np.ndarray] = None
    lower_bounds: Optional[np.ndarray] = None
    constant: float = 0.0

    def __post_init__(self):
        H = np.asarray(self.hessian, dtype=float)
        f = np.asarray(self.linear_cost, dtype=float).ravel()
        n = f.size
        if H.shape != (n, n):
            raise ValueError(f"hessian shape {H.shape} does not match {n} variables")
        scale = max(np.max(np.abs(H)), 1.0) if H.size else 1.0
        if np.max(np.abs(H - H.T), initial=0.0) > 1e-12 * scale:
            raise ValueError("hessian is not symmetric")

        def block(mat, rhs, name):
            if mat is None:
                mat, rhs = np.zeros((0, n)), np.zeros(0)
            mat = np.atleast_2d(np.asarray(mat, dtype=float))
            if mat.size == 0:
                mat = mat.reshape(0, n)
            rhs = np.asarray(rhs, dtype=float).ravel()
            if mat.shape[1] != n:
                raise ValueError(f"{name} matrix has {mat.shape[1]} columns, expected {n}")
            if rhs.size != mat.shape[0]:
                raise ValueError(f"{name} rhs has {rhs.size} entries, expected {mat.shape[0]}")
            return mat, rhs

        A_eq, b_eq = block(self.eq_matrix, self.eq_rhs, "equality")
        A_in, b_in = block(self.ineq_matrix, self.ineq_rhs, "inequality")
        lb = (np.full(n, -np.inf) if self.lower_bounds is None
              else np.asarray(self.lower_bounds, dtype=float).ravel())
        if lb.size != n:
            raise ValueError(f"lower_bounds has {lb.size} entries, expected {n}")
        for name, val in [("hessian", H), ("linear_cost", f), ("eq_matrix", A_eq),
                          ("eq_rhs", b_eq), ("ineq_matrix", A_in), ("ineq_rhs", b_in),
                          ("lower_bounds", lb)]:
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.linear_cost.size

    def with_vectors(self, linear_cost=None, eq_rhs=None, ineq_rhs=None) -> "QuadraticProgram":
        """Copy with new vectors, sharing (and not re-validating) the matrices."""
        new = object.__new__(QuadraticProgram)
        new.__dict__.update(self.__dict__)
        for name, val in [("linear_cost", linear_cost), ("eq_rhs", eq_rhs),
                          ("ineq_rhs", ineq_rhs)]:
            if val is not None:
                val = np.asarray(val, dtype=float).ravel()
                if val.shape != getattr(self, name).shape:
                    raise ValueError(f"{name} has {val.size} entries, expected "
                                     f"{getattr(self, name).size}")
                new.__dict__[name] = val
        return new

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ _sym_matvec(self.hessian, x) + self.linear_cost @ x + self.constant)


@dataclass(frozen=True)
class WorkingSet:
    """Inequality rows held with equality and variables fixed at their bound."""

    inequalities: Tuple[int, ...] = ()
    bounds: Tuple[int, ...] = ()


@dataclass(frozen=True)
class KKTResiduals:
    """Infinity-norm KKT residuals.

    ``stationarity_scale`` is the largest magnitude among the terms summed in
    the stationarity residual (at least 1); with very large multipliers the
    absolute residual cannot fall below roughly ``eps * scale``, so
    optimality is certified on ``stationarity / stationarity_scale``.
    """

    stationarity: float
    primal_feasibility: float
    dual_feasibility: float
    complementarity: float
    stationarity_scale: float = 1.0

    @property
    def relative_stationarity(self) -> float:
        return self.stationarity / self.stationarity_scale

    def within(self, tol: Tolerances) -> bool:
        return (self.relative_stationarity <= tol.stationarity
                and self.primal_feasibility <= max(tol.equality, tol.inequality)
                and self.dual_feasibility <= tol.complementarity
                and self.complementarity <= tol.complementarity)

    def max(self) -> float:
        return max(self.stationarity, self.primal_feasibility, self.dual_feasibility,
                   self.complementarity)


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    eq_duals: np.ndarray
    ineq_duals: np.ndarray
    bound_duals: np.ndarray
    status: Status
    objective: float
    residuals: KKTResiduals
    working_set: WorkingSet = WorkingSet()
    iterations: int = 0
    infeasibility: float = 0.0
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def kkt_residuals(problem: QuadraticProgram, x, eq_duals, ineq_duals, bound_duals) -> KKTResiduals:
    """Infinity-norm KKT residuals of a primal/dual pair."""
    p = problem
    finite = np.isfinite(p.lower_bounds)
    z = np.where(finite, bound_duals, 0.0)
    terms = [_sym_matvec(p.hessian, x), p.linear_cost, p.eq_matrix.T @ eq_duals, p.ineq_matrix.T @ ineq_duals, -z]
    grad = sum(terms)
    stat = float(np.max(np.abs(grad), initial=0.0))
    scale = max(1.0,
                float(np.max(_abs_sym_matvec(p.hessian, x), initial=0.0)),
                float(np.max(np.abs(p.linear_cost), initial=0.0)),
                float(np.max(np.abs(p.eq_matrix.T) @ np.abs(eq_duals), initial=0.0)),
                float(np.max(np.abs(p.ineq_matrix.T) @ np.abs(ineq_duals), initial=0.0)),
                float(np.max(np.abs(z), initial=0.0)))
    eq_res = np.abs(p.eq_matrix @ x - p.eq_rhs)
    in_slack = p.ineq_matrix @ x - p.ineq_rhs
    lb_gap = np.where(finite, x - np.where(finite, p.lower_bounds, 0.0), np.inf)
    primal = max(np.max(eq_res, initial=0.0), np.max(in_slack, initial=0.0),
                 np.max(-lb_gap[finite], initial=0.0))
    dual = max(np.max(-ineq_duals, initial=0.0),
               np.max(-bound_duals[finite], initial=0.0))
    comp = max(np.max(np.abs(ineq_duals * in_slack), initial=0.0),
               np.max(np.abs(bound_duals[finite] * lb_gap[finite]), initial=0.0))
    return KKTResiduals(stat, float(primal), float(dual), float(comp), scale)


# ---------------------------------------------------------------------------
# Linear algebra of one working set
# ---------------------------------------------------------------------------

def _abs_sym_matvec(H, x):
    """``|H| @ |x|`` for symmetric ``H`` using only rows where ``x`` is nonzero."""
    nz = np.flatnonzero(x)
    return np.abs(H[nz]).T @ np.abs(x[nz])


def _sym_matvec(H, X):
    """``H @ X`` for symmetric ``H``, touching only rows of nonzero entries of X."""
    nz = np.flatnonzero(X != 0 if X.ndim == 1 else np.any(X != 0, axis=1))
    if nz.size > 0.5 * X.shape[0]:
        return H @ X
    return H[nz].T @ X[nz]


class _Factor:
    """Null-space factorization of the equality-constrained subproblem.

    Working-set normals restricted to the free variables ``C_F`` are
    factored as ``C_F' = Q R`` with ``Q = [Y Z]``. The free variables are
    kept in slot order ``free_idx`` (not sorted) so that fixing or freeing a
    variable and adding or dropping a working row are cheap QR updates;
    the rows of ``H`` on the free variables are cached in the same order.
    """

    REFRESH = 64     # updates between full refactorizations

    def __init__(self, H, A_eq, A_in, S, fixed, split=None):
        self.H = H
        self.A_eq = A_eq
        self.A_in = A_in
        # split = (K, d): H = [[K, -K], [-K, K]] + d I and all rows are [a, -a];
        # cached Hessian rows then only need the K half (sign-folded)
        self.split = split
        self._build(list(S), np.asarray(fixed, dtype=bool).copy())

    def _hrows(self, idx):
        """Rows of ``H`` for variables ``idx`` (the K half in split mode)."""
        idx = np.atleast_1d(idx)
        if self.split is None:
            return self.H[idx]
        K = self.split[0]
        h = K.shape[0]
        sign = np.where(idx < h, 1.0, -1.0)
        return K[idx % h] * sign[:, None]

    # -- construction -----------------------------------------------------------
    def _build(self, S, fixed):
        self.S = list(S)
        self.free = ~fixed
        self.free_idx = np.flatnonzero(self.free)
        self.C = np.vstack([self.A_eq, self.A_in[S]]) if S else self.A_eq
        m, nf = self.C.shape[0], self.free_idx.size
        if m > nf:
            raise AssumptionViolated("more working constraints than free variables")
        self.Q, self.R = sla.qr(self.C[:, self.free_idx].T, mode="full", check_finite=False)
        self._check_rank()
        width = self.H.shape[0] if self.split is None else self.split[0].shape[0]
        cap = min(self.H.shape[0], nf + 32)
        self._HF = np.empty((cap, width))
        self._HF[:nf] = self._hrows(self.free_idx)
        self._HFF = np.empty((cap, cap))
        self._HFF[:nf, :nf] = self._hcols(self._HF[:nf], self.free_idx)
        self.updates = 0
        self._reduce()

    def _hcols(self, rows, idx):
        """Columns ``idx`` of cached Hessian ``rows``."""
        if self.split is None:
            return np.take(rows, idx, axis=-1)
        h = self.split[0].shape[0]
        out = np.take(rows, idx % h, axis=-1) * np.where(idx < h, 1.0, -1.0)
        if out.ndim == 2:
            out[np.diag_indices(out.shape[0])] += self.split[1]
        return out

    def _check_rank(self):
        m = self.C.shape[0]
        if m > self.free_idx.size:
            raise AssumptionViolated("more working constraints than free variables")
        if m:
            d = np.abs(np.diag(self.R[:m]))
            if d.min() <= _SINGULAR_RTOL * max(d.max(), 1.0) or d.min() == 0.0:
                raise AssumptionViolated("working-set normals are linearly dependent")

    def _reduce(self):
        m, nf = self.C.shape[0], self.free_idx.size
        self.Y, self.Z, self.Rm = self.Q[:, :m], self.Q[:, m:], self.R[:m]
        self.HF_all = self._HF[:nf]
        self.HFF = self._HFF[:nf, :nf]
        Hr = self.Z.T @ self.HFF @ self.Z
        try:
            self.chol = (sla.cho_factor(Hr, lower=True, check_finite=False)
                         if Hr.size else None)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("reduced Hessian is not positive definite") from exc

    @property
    def fixed(self):
        return ~self.free

    @property
    def fixed_idx(self):
        return np.flatnonzero(~self.free)

    # -- updates ----------------------------------------------------------------
    def sync(self, S, fixed):
        """Move the factorization to working set ``(S, fixed)``."""
        S = list(S)
        to_fix = np.flatnonzero(fixed & self.free)
        to_free = np.flatnonzero(~fixed & ~self.free)
        n_changes = to_fix.size + to_free.size + len(set(S) ^ set(self.S))
        if n_changes == 0:
            return
        if self.updates + n_changes > self.REFRESH or n_changes > 4:
            self._build(S, np.asarray(fixed, dtype=bool).copy())
            return
        try:
            n_eq = self.A_eq.shape[0]
            for i in [i for i in self.S if i not in S]:      # relax first
                self._drop_row(n_eq + self.S.index(i))
            for j in to_free:
                self._free_var(int(j))
            for i in S:
                if i not in self.S:
                    self._add_row(i)
            for j in to_fix:
                self._fix_var(int(j))
            if self.S != S:   # same rows, different order
                raise ValueError("working rows out of order")
            self._check_rank()
            self._reduce()
        except (ValueError, np.linalg.LinAlgError):
            self._build(S, np.asarray(fixed, dtype=bool).copy())

    def _drop_row(self, k):
        self.Q, self.R = sla.qr_delete(self.Q, self.R, k, 1, which="col", check_finite=False)
        self.C = np.delete(self.C, k, axis=0)
        self.S.pop(k - self.A_eq.shape[0])
        self.updates += 1

    def _add_row(self, i):
        row = self.A_in[i]
        m = self.C.shape[0]
        if m + 1 > self.free_idx.size:
            raise AssumptionViolated("more working constraints than free variables")
        self.Q, self.R = sla.qr_insert(self.Q, self.R, row[self.free_idx], m, which="col",
                                       check_finite=False)
        self.C = np.vstack([self.C, row])
        self.S.append(i)
        self.updates += 1

    def _free_var(self, j):
        nf = self.free_idx.size
        if nf == 0:
            raise ValueError("rebuild from empty free set")
        self.Q, self.R = sla.qr_insert(self.Q, self.R, self.C[:, j], nf, which="row",
                                       check_finite=False)
        if nf >= self._HF.shape[0]:
            cap = min(self.H.shape[0], 2 * nf + 1)
            grown = np.empty((cap, self._HF.shape[1]))
            grown[:nf] = self._HF[:nf]
            self._HF = grown
            grown = np.empty((cap, cap))
            grown[:nf, :nf] = self._HFF[:nf, :nf]
            self._HFF = grown
        self._HF[nf] = self._hrows(j)[0]
        self.free_idx = np.append(self.free_idx, j)
        r = self._hcols(self._HF[nf], self.free_idx)
        if self.split is not None:
            r[nf] += self.split[1]
        self._HFF[nf, :nf + 1] = r
        self._HFF[:nf + 1, nf] = r
        self.free[j] = True
        self.updates += 1

    def _fix_var(self, j):
        nf = self.free_idx.size
        k = int(np.flatnonzero(self.free_idx == j)[0])
        last = nf - 1
        if nf - 1 < self.C.shape[0] or nf == 1:
            raise ValueError("rebuild to report the dependency")
        if k != last:   # a row permutation of C_F' permutes the rows of Q
            self.Q[[k, last]] = self.Q[[last, k]]
            self._HF[[k, last]] = self._HF[[last, k]]
            self._HFF[[k, last], :nf] = self._HFF[[last, k], :nf]
            self._HFF[:nf, [k, last]] = self._HFF[:nf, [last, k]]
            self.free_idx[[k, last]] = self.free_idx[[last, k]]
        self.Q, self.R = sla.qr_delete(self.Q, self.R, last, 1, which="row", check_finite=False)
        self.free_idx = self.free_idx[:last]
        self.free[j] = False
        self.updates += 1

    # -- solves -----------------------------------------------------------------
    def solve(self, f, b_w, x_fixed):
        """Solve the subproblem for parameters; columns of f/b_w are separate rhs.

        ``x_fixed`` holds the values of the fixed variables (sorted index
        order). Returns the free-variable part (slot order), working
        multipliers and bound multipliers (sorted fixed order).
        """
        free_idx, fixed_idx = self.free_idx, self.fixed_idx
        C = self.C
        k = f.shape[1]
        h = f[free_idx]
        rhs_b = b_w
        HxB_fixed = None
        if fixed_idx.size and np.any(x_fixed):
            xB = np.zeros((self.free.size, k))
            xB[fixed_idx] = x_fixed
            HxB = _sym_matvec(self.H, xB)
            h = h + HxB[free_idx]
            HxB_fixed = HxB[fixed_idx]
            rhs_b = b_w - np.take(C, fixed_idx, axis=1) @ x_fixed
        xF = np.zeros((free_idx.size, k))
        for sweep in range(2):   # one pass plus one step of iterative refinement
            r_b = rhs_b - np.take(C, free_idx, axis=1) @ xF if sweep else rhs_b
            if self.Rm.size:
                dx = self.Y @ sla.solve_triangular(self.Rm, r_b, trans="T", check_finite=False)
            else:
                dx = np.zeros_like(xF)
            if self.chol is not None:
                r_g = self.HFF @ (xF + dx) + h
                dx = dx - self.Z @ sla.cho_solve(self.chol, self.Z.T @ r_g, check_finite=False)
            xF = xF + dx
        gF = self.HFF @ xF + h
        if self.Rm.size:
            nu = sla.solve_triangular(self.Rm, -(self.Y.T @ gF), check_finite=False)
        else:
            nu = np.zeros((0, k))
        if self.split is None:
            g_all = self.HF_all.T @ xF + C.T @ nu
            gB = g_all[fixed_idx] + f[fixed_idx]
        else:   # fixed variables are not free, so the d I term does not reach them
            h = self.split[0].shape[0]
            half = self.HF_all.T @ xF + C[:, :h].T @ nu
            g_all = np.concatenate([half, -half]) + f
            gB = g_all[fixed_idx]
        if HxB_fixed is not None:
            gB = gB + HxB_fixed
        return xF, nu, gB

    def null_norm(self, q_free):
        if self.Z.shape[1] == 0:
            return 0.0
        return float(np.linalg.norm(self.Z.T @ q_free))

    def coefficients(self, q_free):
        """``w`` with ``C_F' w = q_free`` (least squares)."""
        if not self.Rm.size:
            return np.zeros(0)
        return sla.solve_triangular(self.Rm, self.Y.T @ q_free, check_finite=False)


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------

@dataclass
class _Params:
    f: np.ndarray
    b_eq: np.ndarray
    b_in: np.ndarray
    lb: np.ndarray

    def lerp(self, other: "_Params", t: float) -> "_Params":
        return _Params(*(a + t * (b - a) for a, b in zip(self.astuple(), other.astuple())))

    def delta(self, other: "_Params") -> "_Params":
        return _Params(*(b - a for a, b in zip(self.astuple(), other.astuple())))

    def astuple(self):
        return (self.f, self.b_eq, self.b_in, self.lb)


class _Infeasible(Exception):
    pass


class _IterationLimit(Exception):
    pass


class ActiveSetSolver:
    """Workspace for solving one :class:`QuadraticProgram`.

    Holds mutable state; use one instance per concurrent solve.
    """

    def __init__(self, problem: QuadraticProgram, tolerances: Tolerances = Tolerances(),
                 max_iterations: Optional[int] = None):
        self.problem = problem
        self.tol = tolerances
        self.max_iterations = max_iterations or 50 * max(problem.n, 1)
        self._hot = None
        self.iterations = 0
        p = problem
        self.n = p.n
        self.bounded = np.isfinite(p.lower_bounds)
        self._lb_work = np.where(self.bounded, p.lower_bounds, 0.0)
        self._reduce_equalities()
        norms = np.linalg.norm(p.ineq_matrix, axis=1)
        self.in_scale = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 1.0)
        self.A_in = p.ineq_matrix * self.in_scale[:, None]
        self._A_in_abs = np.abs(self.A_in)
        self.m_in = self.A_in.shape[0]
        self.hscale = max(np.max(np.abs(p.hessian), initial=0.0), 1.0)
        try:
            np.linalg.cholesky(p.hessian)
            self.reg = 0.0
            self.H = p.hessian
        except np.linalg.LinAlgError:
            self.reg = 1e-9 * self.hscale
            self.H = p.hessian + self.reg * np.eye(self.n)
        self._split = self._detect_split()

    # -- preprocessing -------------------------------------------------------
    def _detect_split(self):
        """``(K, reg)`` if the problem has the positive/negative split structure."""
        Hp, n = self.problem.hessian, self.n
        if n % 2 or n == 0:
            return None
        h = n // 2
        K = Hp[:h, :h]
        if not (np.array_equal(Hp[:h, h:], -K) and np.array_equal(Hp[h:, :h], -K)
                and np.array_equal(Hp[h:, h:], K)):
            return None
        for A in (self.A_eq, self.A_in):
            if not np.array_equal(A[:, h:], -A[:, :h]):
                return None
        return np.ascontiguousarray(K), self.reg

    def _reduce_equalities(self):
        """Drop numerically dependent equality rows (pivoted QR)."""
        A = self.problem.eq_matrix
        self.eq_keep = np.arange(A.shape[0])
        self._eq_drop = np.zeros(0, dtype=int)
        self._eq_transfer = None
        self.A_eq = A
        self.eq_scale = np.ones(0)
        if A.shape[0] == 0:
            return
        _, R, piv = sla.qr(A.T, mode="economic", pivoting=True)
        d = np.abs(np.diag(R))
        rank = int(np.sum(d > _EQ_RANK_RTOL * max(d[0], 1e-300))) if d.size else 0
        keep = np.sort(piv[:rank])
        if rank < A.shape[0]:
            self._eq_drop = np.setdiff1d(np.arange(A.shape[0]), keep)
            # dropped rows evaluated at the min-norm solution of the kept rows
            self._eq_transfer = A[self._eq_drop] @ np.linalg.pinv(A[keep])
            log.debug("dropped %d dependent equality rows", self._eq_drop.size)
        self.eq_keep = keep
        self.A_eq = A[keep]
        self._equilibrate_eq()

    def _equilibrate_eq(self):
        norms = np.linalg.norm(self.A_eq, axis=1)
        self.eq_scale = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 1.0)
        self.A_eq = self.A_eq * self.eq_scale[:, None]

    @property
    def b_eq(self) -> np.ndarray:
        return self.problem.eq_rhs[self.eq_keep] * self.eq_scale

    @property
    def eq_inconsistency(self) -> float:
        if self._eq_transfer is None:
            return 0.0
        b = self.problem.eq_rhs
        return float(np.max(np.abs(self._eq_transfer @ b[self.eq_keep] - b[self._eq_drop])))

    def update(self, linear_cost=None, eq_rhs=None, ineq_rhs=None) -> None:
        """Replace the problem vectors, keeping the matrix factorizations."""
        self.problem = self.problem.with_vectors(linear_cost, eq_rhs, ineq_rhs)

    # -- working-set helpers -------------------------------------------------
    def _normals(self, S):
        return np.vstack([self.A_eq, self.A_in[list(S)]]) if len(S) else self.A_eq

    def _factor(self, S, fixed):
        return _Factor(self.H, self.A_eq, self.A_in, S, fixed, self._split)

    def _solve_ws(self, fac, S, fixed, prm_cols):
        """Solve subproblem for a list of parameter sets (stacked as columns)."""
        f = np.column_stack([q.f for q in prm_cols])
        bw = np.column_stack([np.concatenate([q.b_eq, q.b_in[list(S)]]) for q in prm_cols])
        xB = np.column_stack([q.lb[fixed] for q in prm_cols])
        xF, nu, zB = fac.solve(f, bw, xB)
        x = np.zeros((self.n, len(prm_cols)))
        x[fac.free_idx] = xF
        x[fixed] = xB
        return x, nu, zB

    # -- homotopy --------------------------------------------------------------
    def _homotopy(self, S, fixed, start: _Params, target: _Params, allow_infeasible: bool):
        """Track the optimal working set from ``start`` to ``target``."""
        S = list(S)
        fixed = fixed.copy()
        d = start.delta(target)
        tau = 0.0
        zero_steps = 0
        fac = None
        while True:
            self.iterations += 1
            if self.iterations > self.max_iterations:
                raise _IterationLimit(S, fixed)
            if fac is None:
                fac = self._factor(S, fixed)
            else:
                fac.sync(S, fixed)
            cur = start.lerp(target, tau)
            X, NU, ZB = self._solve_ws(fac, S, fixed, [cur, _Params(*d.astuple())])
            x, dx = X[:, 0], X[:, 1]
            n_eq = self.A_eq.shape[0]
            mu, dmu = NU[n_eq:, 0], NU[n_eq:, 1]
            zB, dzB = ZB[:, 0], ZB[:, 1]
            # Homogeneous direction: the fixed values move with lb, the rhs with b.
            remaining = 1.0 - tau
            best, kind, idx = remaining, None, None
            # primal: inactive inequality rows
            if self.m_in > len(S):
                AX = self.A_in @ X
                slack = cur.b_in - AX[:, 0]
                rate = AX[:, 1] - d.b_in
                scale = 1e-12 * (self._A_in_abs @ (np.abs(x) + np.abs(dx))
                                 + np.abs(cur.b_in) + 1.0)
                mask = rate > scale
                mask[S] = False
                if np.any(mask):
                    rows = np.flatnonzero(mask)
                    steps = np.maximum(slack[rows], 0.0) / rate[rows]
                    k = int(np.argmin(steps))
                    if steps[k] < best:
                        best, kind, idx = steps[k], "row", int(rows[k])
            # primal: free bounded variables
            freeb = np.flatnonzero(~fixed & self.bounded)
            if freeb.size:
                gap = x[freeb] - cur.lb[freeb]
                rate = -(dx[freeb] - d.lb[freeb])
                scale = 1e-12 * (np.abs(x[freeb]) + np.abs(dx[freeb]) + 1.0)
                mask = rate > scale
                if np.any(mask):
                    steps = np.maximum(gap[mask], 0.0) / rate[mask]
                    k = int(np.argmin(steps))
                    if steps[k] < best:
                        best, kind, idx = steps[k], "bound", int(freeb[mask][k])
            # dual: working inequality multipliers
            if len(S):
                scale = 1e-12 * (np.abs(mu) + np.abs(dmu) + self.hscale)
                mask = dmu < -scale
                if np.any(mask):
                    steps = np.maximum(mu[mask], 0.0) / (-dmu[mask])
                    k = int(np.argmin(steps))
                    if steps[k] < best:
                        best, kind, idx = steps[k], "drop_row", int(np.flatnonzero(mask)[k])
            fixed_idx = np.flatnonzero(fixed)
            if fixed_idx.size:
                scale = 1e-12 * (np.abs(zB) + np.abs(dzB) + self.hscale)
                mask = dzB < -scale
                if np.any(mask):
                    steps = np.maximum(zB[mask], 0.0) / (-dzB[mask])
                    k = int(np.argmin(steps))
                    if steps[k] < best:
                        best, kind, idx = steps[k], "drop_bound", int(fixed_idx[mask][k])
            if kind is None:
                return S, fixed
            tau += best
            if log.isEnabledFor(logging.DEBUG):
                log.debug("it %d tau %.6g step %.3g %s %s |S|=%d free=%d", self.iterations, tau,
                          best, kind, idx, len(S), int((~fixed).sum()))
            zero_steps = zero_steps + 1 if best == 0.0 else 0
            if kind == "drop_row":
                S.pop(idx)
            elif kind == "drop_bound":
                fixed[idx] = False
            else:
                nut = NU[:, 0] + best * NU[:, 1]
                zt = zB + best * dzB
                S, fixed = self._add(fac, S, fixed, kind, idx, nut, zt, allow_infeasible)

    def _add(self, fac, S, fixed, kind, idx, nu, zB, allow_infeasible):
        if kind == "row":
            q = self.A_in[idx]
        else:
            q = np.zeros(self.n)
            q[idx] = -1.0
        qF = q[fac.free_idx]
        qn = np.linalg.norm(qF)
        if qn > 0 and fac.null_norm(qF) > _DEP_TOL * qn:
            if kind == "row":
                return S + [idx], fixed
            fixed = fixed.copy()
            fixed[idx] = True
            return S, fixed
        # Dependent normal: exchange with a working constraint whose multiplier
        # reaches zero first while the new multiplier grows.
        w = fac.coefficients(qF)
        C = fac.C
        v = C[:, fixed].T @ w - q[fixed]
        n_eq = self.A_eq.shape[0]
        mu, w_in = nu[n_eq:], w[n_eq:]
        cands = []
        for k in np.flatnonzero(w_in > 1e-12 * max(np.abs(w).max(initial=0.0), 1.0)):
            cands.append((max(mu[k], 0.0) / w_in[k], "row", k))
        fixed_idx = np.flatnonzero(fixed)
        for k in np.flatnonzero(v > 1e-12 * max(np.abs(v).max(initial=0.0), 1.0)):
            cands.append((max(zB[k], 0.0) / v[k], "bound", fixed_idx[k]))
        if not cands:
            raise _Infeasible()
        _, ckind, ck = min(cands, key=lambda c: c[0])
        S = list(S)
        fixed = fixed.copy()
        if ckind == "row":
            S.pop(int(ck))
        else:
            fixed[ck] = False
        if kind == "row":
            S.append(idx)
        else:
            fixed[idx] = True
        return S, fixed

    # -- starting points -------------------------------------------------------
    def _aux_params(self, x0, S, fixed, target: _Params) -> _Params:
        """Parameters for which ``x0`` with working set ``(S, fixed)`` is optimal."""
        fac = self._factor(S, fixed)
        # multipliers of x0 for the target cost
        C = fac.C
        g = self.H @ x0 + target.f
        gF = g[fac.free_idx]
        nu = fac.coefficients(-gF)
        n_eq = self.A_eq.shape[0]
        floor = 1e-6 * self.hscale
        mu = np.maximum(nu[n_eq:], floor)
        nu = np.concatenate([nu[:n_eq], mu])
        zB = g[fixed] + C[:, fixed].T @ nu
        zB = np.maximum(zB, floor)
        f0 = -(self.H @ x0) - C.T @ nu
        f0[fixed] += zB
        b_in0 = np.maximum(target.b_in, self.A_in @ x0)
        if len(S):
            b_in0[list(S)] = self.A_in[list(S)] @ x0
        lb0 = np.where(self.bounded, np.minimum(target.lb, x0), target.lb)
        lb0[fixed] = x0[fixed]
        return _Params(f0, self.A_eq @ x0, b_in0, lb0)

    def _x_for_working_set(self, S, fixed, prm: _Params):
        fac = self._factor(S, fixed)
        X, _, _ = self._solve_ws(fac, S, fixed, [prm])
        return X[:, 0]

    def _phase1(self, prm: _Params):
        """Elastic LP. Returns (x, violation)."""
        n, me, mi = self.n, self.A_eq.shape[0], self.m_in
        c = np.concatenate([np.zeros(n), np.ones(2 * me + mi)])
        A_eq = np.hstack([self.A_eq, np.eye(me), -np.eye(me), np.zeros((me, mi))]) if me else None
        A_ub = np.hstack([self.A_in, np.zeros((mi, 2 * me)), -np.eye(mi)]) if mi else None
        bounds = [(lb if bd else None, None) for lb, bd in zip(prm.lb, self.bounded)] + [(0, None)] * (2 * me + mi)
        res = linprog(c, A_ub=A_ub, b_ub=prm.b_in if mi else None, A_eq=A_eq,
                      b_eq=prm.b_eq if me else None, bounds=bounds, method="highs-ds")
        if res.status not in (0,):
            raise np.linalg.LinAlgError(f"phase-1 LP failed: {res.message}")
        return res.x[:n], float(res.fun)

    def _vertex_working_set(self, x, prm: _Params):
        """Independent working set of constraints active at ``x``."""
        atol = 1e-9 * (1.0 + np.abs(x))
        at_bound = self.bounded & (x - prm.lb <= atol)
        fixed = at_bound.copy()
        me = self.A_eq.shape[0]
        # release bounds until the equality normals are independent on the free set
        if me:
            free_cols = np.flatnonzero(~fixed)
            AF = self.A_eq[:, free_cols]
            r = np.linalg.matrix_rank(AF, tol=None) if AF.size else 0
            if r < me:
                cand = np.flatnonzero(at_bound)
                # project candidate columns off the span of the free columns
                if AF.size:
                    Qf, _ = np.linalg.qr(AF)
                    Qf = Qf[:, :r]
                    Acand = self.A_eq[:, cand] - Qf @ (Qf.T @ self.A_eq[:, cand])
                else:
                    Acand = self.A_eq[:, cand]
                _, _, piv = sla.qr(Acand, mode="economic", pivoting=True)
                fixed[cand[piv[:me - r]]] = False
        S = []
        slack = prm.b_in - self.A_in @ x
        active = np.flatnonzero(np.abs(slack) <= 1e-9 * (1.0 + np.abs(prm.b_in)))
        for i in active:
            try:
                self._factor(S + [int(i)], fixed)
                S.append(int(i))
            except AssumptionViolated:
                continue
        return S, fixed

    # -- main entry ------------------------------------------------------------
    def solve(self, warm_start: Optional[WorkingSet] = None) -> QpSolution:
        """Solve the current problem.

        Args:
            warm_start: Working set to start from. If it is the working set
                returned by this workspace's previous solve, the previous
                problem itself is deformed into the current one, which is
                the cheapest restart for slowly varying data.
        """
        p = self.problem
        target = _Params(p.linear_cost.copy(), self.b_eq.copy(), p.ineq_rhs * self.in_scale,
                         self._lb_work.copy())
        self.iterations = 0
        if self.eq_inconsistency > self.tol.infeasibility:
            return self._infeasible(self.eq_inconsistency, "inconsistent equality constraints")
        state = None
        if warm_start is not None:
            hot = self._hot
            if hot is not None and hot[0] == warm_start:
                state = self._attempt(lambda: self._run(hot[3], hot[1], hot[2], target,
                                                        allow_infeasible=True, start=hot[4]))
            if state is None:
                state = self._attempt(lambda: self._warm(warm_start, target))
        if state is None:
            try:
                x0, viol = self._phase1(target)
            except np.linalg.LinAlgError as exc:
                return self._infeasible(np.inf, str(exc))
            if viol > self.tol.infeasibility:
                return self._infeasible(viol, "phase-1 violation above tolerance")
            S, fixed = self._vertex_working_set(x0, target)
            x0 = np.where(fixed, target.lb, x0)
            try:
                state = self._run(x0, S, fixed, target, allow_infeasible=False)
            except _Infeasible:
                return self._infeasible(viol, "dependent blocking constraint after phase 1")
            except _IterationLimit as exc:
                S, fixed = exc.args
                x = self._x_for_working_set(S, fixed, target)
                return self._finish(S, fixed, x, target, Status.MAX_ITERATIONS)
        S, fixed, x, last = state
        sol = self._finish(S, fixed, x, target, Status.OPTIMAL)
        self._hot = (sol.working_set, list(S), fixed.copy(), x.copy(), last)
        return sol

    def _attempt(self, fn):
        used = self.iterations
        try:
            return fn()
        except (AssumptionViolated, np.linalg.LinAlgError, _Infeasible, _IterationLimit) as exc:
            log.debug("restart abandoned after %d iterations: %r", self.iterations - used, exc)
            self.iterations = used
            return None

    def _warm(self, ws: WorkingSet, target: _Params):
        fixed = np.zeros(self.n, dtype=bool)
        idx = np.asarray(ws.bounds, dtype=int)
        fixed[idx[self.bounded[idx]]] = True
        S = [int(i) for i in ws.inequalities if 0 <= i < self.m_in]
        x0 = self._x_for_working_set(S, fixed, target)
        return self._run(x0, S, fixed, target, allow_infeasible=True)

    def _run(self, x0, S, fixed, target, allow_infeasible, start: Optional[_Params] = None):
        """Homotopy from ``start`` (or an auxiliary problem) to ``target``.

        ``(S, fixed)`` must be optimal for ``start``; when ``start`` is None an
        auxiliary problem is built around ``x0``. For semidefinite Hessians
        proximal iterations follow. Returns the final working set, primal
        point and the (inner) parameters it is optimal for.
        """
        if not self.reg:
            S, fixed = self._track(S, fixed, start, target, allow_infeasible, x0)
            return S, fixed, self._x_for_working_set(S, fixed, target), target
        # proximal point: minimize q(x) + reg/2 |x - c|^2, then c <- x
        center = x0
        for _ in range(500):
            tgt = _Params(target.f - self.reg * center, *target.astuple()[1:])
            S, fixed = self._track(S, fixed, start, tgt, allow_infeasible, center)
            x = self._x_for_working_set(S, fixed, tgt)
            step = np.max(np.abs(x - center), initial=0.0)
            start, center = tgt, x
            if self.reg * step <= 0.05 * self.tol.stationarity:
                return S, fixed, center, tgt
        raise _IterationLimit(S, fixed)

    def _track(self, S, fixed, start, target, allow_infeasible, x0):
        """Homotopy to ``target`` from ``start`` (or an auxiliary problem at ``x0``)."""
        if start is None:
            start = self._aux_params(x0, S, fixed, target)
        return self._homotopy(S, fixed, start, target, allow_infeasible)

    def _infeasible(self, viol, msg) -> QpSolution:
        p = self.problem
        nan = np.full(p.n, np.nan)
        res = KKTResiduals(np.inf, np.inf, np.inf, np.inf)
        return QpSolution(nan, np.full(p.eq_matrix.shape[0], np.nan), np.full(self.m_in, np.nan),
                          np.full(p.n, np.nan), Status.INFEASIBLE, np.inf, res,
                          iterations=self.iterations, infeasibility=viol, message=msg)

    def _finish(self, S, fixed, x, target, status) -> QpSolution:
        p = self.problem
        x = x.copy()
        x[fixed] = target.lb[fixed]
        nu, zB = self._exact_multipliers(x, S, fixed, target)
        n_eq = self.A_eq.shape[0]
        eq_duals = np.zeros(p.eq_matrix.shape[0])
        eq_duals[self.eq_keep] = nu[:n_eq] * self.eq_scale
        ineq_duals = np.zeros(self.m_in)
        ineq_duals[list(S)] = nu[n_eq:] * self.in_scale[list(S)]
        bound_duals = np.zeros(p.n)
        bound_duals[fixed] = zB
        res = kkt_residuals(p, x, eq_duals, ineq_duals, bound_duals)
        if status is Status.OPTIMAL and not res.within(self.tol):
            log.warning("KKT residuals above tolerance: %s", res)
            status = Status.MAX_ITERATIONS
            message = "KKT residuals above tolerance"
        else:
            message = ""
        ws = WorkingSet(tuple(sorted(int(i) for i in S)),
                        tuple(int(j) for j in np.flatnonzero(fixed)))
        return QpSolution(x, eq_duals, ineq_duals, bound_duals, status, p.objective(x), res,
                          ws, self.iterations, message=message)

    def _exact_multipliers(self, x, S, fixed, target):
        """Multipliers of the original (unregularized) problem at ``x``."""
        C = self._normals(S)
        free = ~fixed
        g = _sym_matvec(self.problem.hessian, x) + target.f
        CF = C[:, free]
        if C.shape[0]:
            nu = np.linalg.lstsq(CF.T, -g[free], rcond=None)[0]
        else:
            nu = np.zeros(0)
        zB = g[fixed] + C[:, fixed].T @ nu
        return nu, zB


def solve_qp(problem: QuadraticProgram, tolerances: Tolerances = Tolerances(),
             max_iterations: Optional[int] = None,
             warm_start: Optional[WorkingSet] = None) -> QpSolution:
    """Solve a convex QP; see :class:`ActiveSetSolver`."""
    return ActiveSetSolver(problem, tolerances, max_iterations).solve(warm_start)


def solve_kkt_for_active_set(problem: QuadraticProgram, active_set: WorkingSet) -> QpSolution:
    """Solve the equality-constrained QP obtained by enforcing ``active_set``.

    Equalities plus the listed inequality rows are imposed with equality and
    the listed variables are fixed at their lower bounds. The result carries
    the multipliers of all enforced constraints; it is not checked for sign
    or feasibility of the remaining constraints.

    Raises:
        AssumptionViolated: if the enforced constraint normals are dependent.
    """
    p = problem
    S = list(active_set.inequalities)
    fixed = np.zeros(p.n, dtype=bool)
    fixed[list(active_set.bounds)] = True
    if np.any(~np.isfinite(p.lower_bounds[fixed])):
        raise ValueError("cannot fix a variable without a finite lower bound")
    C = np.vstack([p.eq_matrix, p.ineq_matrix[S]])
    free = ~fixed
    CF = C[:, free]
    m, nf = CF.shape
    if m > nf or (m and np.linalg.matrix_rank(CF) < m):
        raise AssumptionViolated("Assumption 1 violated: active constraint rows are dependent")
    xB = p.lower_bounds[fixed]
    K = np.block([[p.hessian[np.ix_(free, free)], CF.T], [CF, np.zeros((m, m))]])
    rhs = np.concatenate([-(p.linear_cost[free] + p.hessian[np.ix_(free, fixed)] @ xB),
                          np.concatenate([p.eq_rhs, p.ineq_rhs[S]]) - C[:, fixed] @ xB])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError as exc:
        raise AssumptionViolated("KKT matrix of the active set is singular") from exc
    x = np.zeros(p.n)
    x[free] = sol[:nf]
    x[fixed] = xB
    nu = sol[nf:]
    m_eq = p.eq_matrix.shape[0]
    ineq_duals = np.zeros(p.ineq_matrix.shape[0])
    ineq_duals[S] = nu[m_eq:]
    g = p.hessian @ x + p.linear_cost + C.T @ nu
    bound_duals = np.zeros(p.n)
    bound_duals[fixed] = g[fixed]
    res = kkt_residuals(p, x, nu[:m_eq], ineq_duals, bound_duals)
    ok = res.within(Tolerances())
    return QpSolution(x, nu[:m_eq], ineq_duals, bound_duals,
                      Status.OPTIMAL if ok else Status.MAX_ITERATIONS, p.objective(x), res,
                      WorkingSet(tuple(sorted(S)), tuple(np.flatnonzero(fixed).tolist())))
