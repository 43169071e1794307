"""Lasso-regularized DeePC: problem assembly, solution and selector metrics.

The selector ``g`` is split as ``g = g_plus - g_minus`` with both halves
nonnegative, which turns the l1 penalty into a linear cost and the whole
problem into a convex QP over ``[g_plus; g_minus]``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, Optional

import numpy as np

from .qp import (ActiveSetSolver, QpSolution, QuadraticProgram, Status, Tolerances,
                 WorkingSet)
from .signal_data import BlockDataMatrix

DEFAULT_LAMBDA_2 = 1e-6
SELECTED_RTOL = 1e-6


def _as_weight(w, n: int, name: str) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim == 0:
        w = w * np.eye(n)
    elif w.ndim == 1:
        w = np.diag(w)
    if w.shape != (n, n):
        raise ValueError(f"{name} must be {n}x{n}, got {w.shape}")
    if not np.allclose(w, w.T):
        raise ValueError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(w)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} must be positive definite") from None
    return w


def _as_bound(b, n: int, sign: float) -> np.ndarray:
    if b is None:
        return np.full(n, sign * np.inf)
    b = np.broadcast_to(np.asarray(b, dtype=float), (n,)).copy()
    return b


def pad_reference(ref, horizon: int, n: int) -> np.ndarray:
    """Reference over the horizon as a (horizon, n) array.

    Shorter references are extended by holding their last value.
    """
    ref = np.asarray(ref, dtype=float)
    if ref.ndim <= 1:
        ref = ref.reshape(-1, n) if ref.size % n == 0 and ref.size > 0 else ref.reshape(-1, 1)
    if ref.shape[0] == 0 or ref.shape[1] != n:
        raise ValueError(f"reference must have {n} channels and at least one sample")
    if ref.shape[0] < horizon:
        ref = np.vstack([ref, np.repeat(ref[-1:], horizon - ref.shape[0], axis=0)])
    return ref[:horizon]


@dataclass(frozen=True)
class DeePCProblem:
    """Design parameters of one Lasso-DeePC problem.

    Attributes:
        rho: Number of past samples in the initial window.
        horizon: Prediction horizon ``L``.
        Q: Output weight (n_y x n_y, scalar or diagonal accepted).
        R: Input weight (n_u x n_u).
        lambda_g: l1 weight on the selector.
        lambda_2: Small l2 weight on the selector.
        u_min, u_max: Per-channel input box (``None`` for unbounded).
        y_min, y_max: Optional per-channel output box.
        u_ref, y_ref: References over the horizon, (L, n_u) and (L, n_y).
        lasso: If true, ``lambda_g`` must be positive.
    """

    rho: int
    horizon: int
    Q: np.ndarray = 100.0
    R: np.ndarray = 1.0
    lambda_g: float = 10.0
    lambda_2: float = DEFAULT_LAMBDA_2
    u_min: Optional[np.ndarray] = None
    u_max: Optional[np.ndarray] = None
    y_min: Optional[np.ndarray] = None
    y_max: Optional[np.ndarray] = None
    u_ref: Optional[np.ndarray] = None
    y_ref: Optional[np.ndarray] = None
    n_u: int = 1
    n_y: int = 1
    lasso: bool = True

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.lasso and not self.lambda_g > 0:
            raise ValueError("lambda_g must be positive when the Lasso penalty is active")
        if self.lambda_g < 0 or self.lambda_2 < 0:
            raise ValueError("regularization weights must be nonnegative")
        set_ = lambda k, v: object.__setattr__(self, k, v)
        set_("Q", _as_weight(self.Q, self.n_y, "Q"))
        set_("R", _as_weight(self.R, self.n_u, "R"))
        set_("u_min", _as_bound(self.u_min, self.n_u, -1.0))
        set_("u_max", _as_bound(self.u_max, self.n_u, 1.0))
        set_("y_min", _as_bound(self.y_min, self.n_y, -1.0))
        set_("y_max", _as_bound(self.y_max, self.n_y, 1.0))
        if np.any(self.u_min > self.u_max) or np.any(self.y_min > self.y_max):
            raise ValueError("lower bound above upper bound")
        u_ref = np.zeros((self.horizon, self.n_u)) if self.u_ref is None else self.u_ref
        y_ref = np.zeros((self.horizon, self.n_y)) if self.y_ref is None else self.y_ref
        set_("u_ref", pad_reference(u_ref, self.horizon, self.n_u))
        set_("y_ref", pad_reference(y_ref, self.horizon, self.n_y))

    def with_reference(self, u_ref, y_ref) -> "DeePCProblem":
        return replace(self, u_ref=u_ref, y_ref=y_ref)

    def check_data(self, data: BlockDataMatrix) -> None:
        if (data.rho, data.horizon, data.n_u, data.n_y) != (self.rho, self.horizon,
                                                             self.n_u, self.n_y):
            raise ValueError(
                f"data matrix (rho={data.rho}, L={data.horizon}, n_u={data.n_u}, "
                f"n_y={data.n_y}) does not match problem (rho={self.rho}, "
                f"L={self.horizon}, n_u={self.n_u}, n_y={self.n_y})")


@dataclass(frozen=True)
class InitialWindow:
    """Stacked past window ``[u_{t-rho..t-1}; y_{t-rho..t-1}]`` (time-major)."""

    z_ini: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "z_ini", np.asarray(self.z_ini, dtype=float).ravel())

    @classmethod
    def from_signals(cls, u_past, y_past) -> "InitialWindow":
        u = np.asarray(u_past, dtype=float)
        y = np.asarray(y_past, dtype=float)
        return cls(np.concatenate([u.ravel(), y.ravel()]))

    def check(self, rho: int, n_u: int, n_y: int) -> None:
        if self.z_ini.size != rho * (n_u + n_y):
            raise ValueError(f"z_ini has {self.z_ini.size} entries, expected "
                             f"{rho * (n_u + n_y)}")


@dataclass(frozen=True)
class SelectorSolution:
    """Optimal selector with its split, multipliers and predictions.

    Multiplier conventions follow the Lagrangian
    ``J + beta'(Z_P g - z_ini) + mu'(G g - gamma) - mu_plus'g_plus - mu_minus'g_minus``.
    """

    g: np.ndarray
    g_plus: np.ndarray
    g_minus: np.ndarray
    beta: np.ndarray
    mu: np.ndarray
    mu_plus: np.ndarray
    mu_minus: np.ndarray
    u_f: np.ndarray
    y_f: np.ndarray
    status: Status
    objective: float
    z_ini: np.ndarray
    constraint_matrix: np.ndarray
    constraint_rhs: np.ndarray
    z_p: np.ndarray
    lambda_g: float
    qp: Optional[QpSolution] = field(default=None, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL

    @property
    def first_input(self) -> np.ndarray:
        return self.u_f[0]

    @property
    def norm1(self) -> float:
        return float(np.sum(np.abs(self.g)))

    @property
    def working_set(self) -> Optional[WorkingSet]:
        return None if self.qp is None else self.qp.working_set


def constraint_rows(problem: DeePCProblem, data: BlockDataMatrix):
    """Polyhedral input/output constraints as ``G g <= gamma``.

    Rows come as upper then lower bounds, per time step and channel, inputs
    before outputs; unbounded sides are omitted.
    """
    L = problem.horizon
    blocks, rhs = [], []
    for mat, lo, hi in ((data.u_f, problem.u_min, problem.u_max),
                        (data.y_f, problem.y_min, problem.y_max)):
        hi_t, lo_t = np.tile(hi, L), np.tile(lo, L)
        up, dn = np.isfinite(hi_t), np.isfinite(lo_t)
        blocks += [mat[up], -mat[dn]]
        rhs += [hi_t[up], -lo_t[dn]]
    G = np.vstack(blocks) if blocks else np.zeros((0, data.n_g))
    return G, np.concatenate(rhs)


def gram_terms(problem: DeePCProblem, data: BlockDataMatrix):
    """Return ``(K, c, c0)`` with cost ``1/2 g'Kg - c'g + c0`` for the tracking part.

    ``K = 2 Y_F'QY_F + 2 U_F'RU_F + 2 lambda_2 I`` and
    ``c = 2 Y_F'Q y_ref + 2 U_F'R u_ref``.
    """
    Qb = np.kron(np.eye(problem.horizon), problem.Q)
    Rb = np.kron(np.eye(problem.horizon), problem.R)
    yr, ur = problem.y_ref.ravel(), problem.u_ref.ravel()
    QY, RU = Qb @ data.y_f, Rb @ data.u_f
    K = 2.0 * (data.y_f.T @ QY + data.u_f.T @ RU) + 2.0 * problem.lambda_2 * np.eye(data.n_g)
    c = 2.0 * (QY.T @ yr + RU.T @ ur)
    c0 = float(yr @ Qb @ yr + ur @ Rb @ ur)
    return K, c, c0


def _split_cost(c, lambda_g):
    return np.concatenate([-c + lambda_g, c + lambda_g])


def assemble_qp(problem: DeePCProblem, data: BlockDataMatrix,
                z_ini: InitialWindow) -> QuadraticProgram:
    """Lasso-DeePC as a QP over ``[g_plus; g_minus]`` (length ``2 n_g``)."""
    problem.check_data(data)
    z_ini = z_ini if isinstance(z_ini, InitialWindow) else InitialWindow(z_ini)
    z_ini.check(problem.rho, problem.n_u, problem.n_y)
    K, c, c0 = gram_terms(problem, data)
    G, gamma = constraint_rows(problem, data)
    H = np.block([[K, -K], [-K, K]])
    return QuadraticProgram(
        hessian=H,
        linear_cost=_split_cost(c, problem.lambda_g),
        eq_matrix=np.hstack([data.z_p, -data.z_p]),
        eq_rhs=z_ini.z_ini,
        ineq_matrix=np.hstack([G, -G]),
        ineq_rhs=gamma,
        lower_bounds=np.zeros(2 * data.n_g),
        constant=c0,
    )


class DeePCController:
    """Reusable solver for one (problem, data) pair with changing z_ini/references.

    The QP matrices and the solver workspace are built once; each call only
    updates the linear cost and right-hand sides and warm-starts from the
    previous working set.
    """

    def __init__(self, problem: DeePCProblem, data: BlockDataMatrix,
                 tolerances: Tolerances = Tolerances(), max_iterations: Optional[int] = None):
        problem.check_data(data)
        self.problem = problem
        self.data = data
        zero = InitialWindow(np.zeros(data.z_p.shape[0]))
        self._qp = assemble_qp(problem, data, zero)
        self._G, self._gamma = constraint_rows(problem, data)
        Qb = np.kron(np.eye(problem.horizon), problem.Q)
        Rb = np.kron(np.eye(problem.horizon), problem.R)
        self._QY, self._RU, self._Qb, self._Rb = Qb @ data.y_f, Rb @ data.u_f, Qb, Rb
        self.solver = ActiveSetSolver(self._qp, tolerances, max_iterations)
        self.last: Optional[SelectorSolution] = None

    def solve(self, z_ini, u_ref=None, y_ref=None,
              warm_start: Optional[WorkingSet] = None) -> SelectorSolution:
        p = self.problem
        if u_ref is not None or y_ref is not None:
            p = p.with_reference(p.u_ref if u_ref is None else u_ref,
                                 p.y_ref if y_ref is None else y_ref)
        z = z_ini if isinstance(z_ini, InitialWindow) else InitialWindow(z_ini)
        z.check(p.rho, p.n_u, p.n_y)
        yr, ur = p.y_ref.ravel(), p.u_ref.ravel()
        c = 2.0 * (self._QY.T @ yr + self._RU.T @ ur)
        self.solver.update(linear_cost=_split_cost(c, p.lambda_g), eq_rhs=z.z_ini)
        self.solver.problem = replace_constant(self.solver.problem,
                                               float(yr @ self._Qb @ yr + ur @ self._Rb @ ur))
        qp_sol = self.solver.solve(warm_start)
        sol = selector_from_qp(qp_sol, p, self.data, z.z_ini, self._G, self._gamma)
        self.last = sol
        return sol


def replace_constant(qp: QuadraticProgram, constant: float) -> QuadraticProgram:
    new = qp.with_vectors()
    new.__dict__["constant"] = constant
    return new


def selector_from_qp(qp_sol: QpSolution, problem: DeePCProblem, data: BlockDataMatrix,
                     z_ini: np.ndarray, G: np.ndarray, gamma: np.ndarray) -> SelectorSolution:
    n_g = data.n_g
    x = qp_sol.x
    gp, gm = x[:n_g], x[n_g:]
    g = gp - gm
    return SelectorSolution(
        g=g, g_plus=gp, g_minus=gm,
        beta=qp_sol.eq_duals, mu=qp_sol.ineq_duals,
        mu_plus=qp_sol.bound_duals[:n_g], mu_minus=qp_sol.bound_duals[n_g:],
        u_f=(data.u_f @ g).reshape(problem.horizon, problem.n_u),
        y_f=(data.y_f @ g).reshape(problem.horizon, problem.n_y),
        status=qp_sol.status, objective=qp_sol.objective, z_ini=np.asarray(z_ini),
        constraint_matrix=G, constraint_rhs=gamma, z_p=data.z_p,
        lambda_g=problem.lambda_g, qp=qp_sol)


def solve_step(problem: DeePCProblem, data: BlockDataMatrix, z_ini,
               warm_start: Optional[WorkingSet] = None,
               tolerances: Tolerances = Tolerances()) -> SelectorSolution:
    """Solve one Lasso-DeePC problem; ``u_f[0]`` is the receding-horizon input."""
    return DeePCController(problem, data, tolerances).solve(z_ini, warm_start=warm_start)


# -- selector metrics --------------------------------------------------------

def group_masses(solution: SelectorSolution, data: BlockDataMatrix) -> Dict[int, float]:
    """l1 mass of the selector carried by each column group."""
    a = np.abs(solution.g)
    return {lab: float(np.sum(a[data.column_groups == lab])) for lab in data.groups}


def explainability_index(solution: SelectorSolution, data: BlockDataMatrix,
                         target_group: int) -> float:
    """Fraction of the selector's l1 mass carried by ``target_group``.

    Raises:
        ValueError: "undefined index" when the selector is zero.
    """
    total = solution.norm1
    if not total > 0 or not np.isfinite(total):
        raise ValueError("undefined index: selector has zero l1 norm")
    mass = float(np.sum(np.abs(solution.g[data.column_groups == target_group])))
    return min(mass / total, 1.0)   # summation order can push a full mass past 1


def selected_components(solution: SelectorSolution, rtol: float = SELECTED_RTOL) -> np.ndarray:
    """Mask of components with ``|g_k| > rtol * max|g|``."""
    a = np.abs(solution.g)
    top = a.max(initial=0.0)
    return a > rtol * top if top > 0 else np.zeros(a.shape, dtype=bool)


SELECTOR_HEADER = ("step", "k", "group", "g_k")


def selector_rows(step: int, solution: SelectorSolution,
                  data: BlockDataMatrix) -> Iterable[tuple]:
    for k, (grp, gk) in enumerate(zip(data.column_groups, solution.g)):
        yield step, k, int(grp), float(gk)


def write_selector_csv(rows: Iterable[tuple], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SELECTOR_HEADER)
        for step, k, grp, gk in rows:
            w.writerow([step, k, grp, repr(float(gk))])


def read_selector_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = tuple(next(r))
        if header != SELECTOR_HEADER:
            raise ValueError(f"unexpected selector header {header}")
        return [(int(s), int(k), int(grp), float(gk)) for s, k, grp, gk in r]
