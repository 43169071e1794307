"""Receding-horizon Lasso-DeePC on the simulated unbalanced disk."""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .deepc import (DeePCController, DeePCProblem, InitialWindow, SelectorSolution,
                    explainability_index, group_masses)
from .plant import (DiskParams, DiskState, ExcitationConfig, Regime, collect_regime,
                    equilibrium_input, rk4_step)
from .qp import Status, Tolerances
from .signal_data import (BlockDataMatrix, DataPartition, Trajectory, build_explainable_hankel,
                          build_mosaic, build_page)

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e3
DEFAULT_T_SIM = 800
DEFAULT_SWITCH = 200
DEFAULT_RHO = 40
DEFAULT_HORIZON = 30
DEFAULT_T_D = 1000
OP_ANGLES = (0.17, 1.57, 2.97)


class DataStructure(enum.Enum):
    """Benchmark data-matrix strategies.

    ``SINGLE_OP``: Hankel matrix of data around the initial OP only.
    ``TWO_OP_HANKEL``: one Hankel matrix of data alternating between two OPs.
    ``BLOCK_HANKEL``: explainable Hankel matrix of data that visits OP 1 and
    then OP 2 once (one transition).
    ``MOSAIC``: per-OP Hankel matrices of the block experiment side by side.
    ``PAGE``: explainable Page matrix of the block experiment.
    """

    SINGLE_OP = "single_op"
    TWO_OP_HANKEL = "two_op_hankel"
    BLOCK_HANKEL = "block_hankel"
    MOSAIC = "mosaic"
    PAGE = "page"

    @property
    def regime(self) -> Regime:
        if self is DataStructure.SINGLE_OP:
            return Regime.SINGLE_OP
        if self is DataStructure.TWO_OP_HANKEL:
            return Regime.TWO_OP_CYCLES
        return Regime.TWO_OP_SINGLE_TRANSITION


def build_structure(structure: DataStructure, trajectory: Trajectory,
                    partition: DataPartition, rho: int, horizon: int) -> BlockDataMatrix:
    """Data matrix of the given strategy from collected data."""
    structure = DataStructure(structure)
    if structure is DataStructure.MOSAIC:
        return build_mosaic(trajectory, partition, rho, horizon)
    if structure is DataStructure.PAGE:
        return build_page(trajectory, rho, horizon, partition)
    return build_explainable_hankel(trajectory, partition, rho, horizon)


def benchmark_data(structure: DataStructure, op_angles: Sequence[float] = OP_ANGLES[:2],
                   T_d: int = DEFAULT_T_D, seed: int = 0, rho: int = DEFAULT_RHO,
                   horizon: int = DEFAULT_HORIZON, params: DiskParams = DiskParams(),
                   config: ExcitationConfig = ExcitationConfig()
                   ) -> Tuple[Trajectory, DataPartition, BlockDataMatrix]:
    """Collect benchmark data and build the matrix of one strategy."""
    structure = DataStructure(structure)
    traj, part = collect_regime(structure.regime, list(op_angles), T_d, seed, params, config)
    return traj, part, build_structure(structure, traj, part, rho, horizon)


@dataclass(frozen=True)
class ReferenceProfile:
    """Piecewise-constant output reference with implied equilibrium inputs.

    Attributes:
        segments: ``(duration, y_target)`` pairs; the last target is held
            beyond the end of the profile.
        groups: Optional data-group label of each segment's operating point,
            used as the target group of the explainability index.
    """

    segments: Tuple[Tuple[int, float], ...]
    groups: Optional[Tuple[int, ...]] = None
    params: DiskParams = DiskParams()

    def __post_init__(self):
        segs = tuple((int(d), float(y)) for d, y in self.segments)
        if not segs:
            raise ValueError("reference needs at least one segment")
        for d, y in segs:
            if d < 1:
                raise ValueError("segment durations must be at least 1")
            if not np.isfinite(y):
                raise ValueError("segment targets must be finite")
        object.__setattr__(self, "segments", segs)
        if self.groups is not None:
            if len(self.groups) != len(segs):
                raise ValueError("need one group label per segment")
            object.__setattr__(self, "groups", tuple(int(g) for g in self.groups))

    @classmethod
    def switching(cls, y_from: float, y_to: float, T_sim: int = DEFAULT_T_SIM,
                  switch: int = DEFAULT_SWITCH, groups=(1, 2),
                  params: DiskParams = DiskParams()) -> "ReferenceProfile":
        """Step from ``y_from`` to ``y_to`` at sample ``switch``."""
        if not 0 < switch < T_sim:
            raise ValueError("switch must lie inside the simulation")
        return cls(((switch, y_from), (T_sim - switch, y_to)), groups, params)

    @property
    def length(self) -> int:
        return sum(d for d, _ in self.segments)

    def _segment_index(self, t: np.ndarray) -> np.ndarray:
        ends = np.cumsum([d for d, _ in self.segments])
        return np.minimum(np.searchsorted(ends, t, side="right"), len(self.segments) - 1)

    def y(self, t) -> np.ndarray:
        t = np.asarray(t)
        targets = np.array([y for _, y in self.segments])
        return targets[self._segment_index(t)]

    def u(self, t) -> np.ndarray:
        return equilibrium_input(self.y(t), self.params)

    def group(self, t: int) -> Optional[int]:
        if self.groups is None:
            return None
        return self.groups[int(self._segment_index(np.asarray(t)))]

    def horizon(self, t: int, L: int) -> Tuple[np.ndarray, np.ndarray]:
        """``(u_ref, y_ref)`` over samples ``t .. t+L-1``, each (L, 1)."""
        ks = np.arange(t, t + L)
        return self.u(ks).reshape(L, 1), self.y(ks).reshape(L, 1)


class ZIniPolicy(enum.Enum):
    FROM_INITIAL_REFERENCE = "from_initial_reference"
    FROM_WARMUP_SIMULATION = "from_warmup_simulation"


class PlantDivergence(RuntimeError):
    """Raised when the plant output leaves ``|y| <= 1e3``; carries the partial result."""

    def __init__(self, message: str, result: "ClosedLoopResult"):
        super().__init__(message)
        self.result = result


@dataclass
class ClosedLoopResult:
    """Trajectories and per-step selector summaries of one closed-loop run."""

    u: np.ndarray
    y: np.ndarray
    u_ref: np.ndarray
    y_ref: np.ndarray
    status: List[str]
    norm1: np.ndarray
    masses: np.ndarray                 # (T_sim, number of groups)
    group_labels: Tuple[int, ...]
    expl_index: np.ndarray             # NaN where undefined
    rmse_u: float = 0.0
    rmse_y: float = 0.0
    iterations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    selectors: Optional[List[Optional[np.ndarray]]] = None

    @property
    def T_sim(self) -> int:
        return len(self.u)

    @property
    def infeasible_steps(self) -> int:
        return sum(s == Status.INFEASIBLE.value for s in self.status)

    @property
    def all_optimal(self) -> bool:
        return all(s == Status.OPTIMAL.value for s in self.status)

    def mean_norm1(self) -> float:
        ok = np.isfinite(self.norm1)
        return float(np.mean(self.norm1[ok])) if ok.any() else float("nan")

    def mean_expl_index(self) -> float:
        ok = np.isfinite(self.expl_index)
        return float(np.mean(self.expl_index[ok])) if ok.any() else float("nan")


def compute_rmse(u, y, u_ref, y_ref) -> Tuple[float, float]:
    """Root-mean-square input and output tracking errors."""
    u, y, u_ref, y_ref = (np.asarray(a, dtype=float).ravel() for a in (u, y, u_ref, y_ref))
    if not (u.size == y.size == u_ref.size == y_ref.size):
        raise ValueError("trajectories and references must have equal lengths")
    if u.size == 0:
        raise ValueError("empty trajectories")
    return (float(np.sqrt(np.mean((u - u_ref) ** 2))),
            float(np.sqrt(np.mean((y - y_ref) ** 2))))


def run_closed_loop(params: DiskParams, data: BlockDataMatrix, problem: DeePCProblem,
                    reference: ReferenceProfile, T_sim: int = DEFAULT_T_SIM,
                    z_ini_policy: ZIniPolicy = ZIniPolicy.FROM_INITIAL_REFERENCE,
                    initial_state: Optional[DiskState] = None,
                    keep_selectors: bool = False,
                    tolerances: Tolerances = Tolerances(),
                    progress: Optional[Callable[[int, SelectorSolution], None]] = None,
                    stop_on_infeasible: bool = False,
                    ) -> ClosedLoopResult:
    """Simulate receding-horizon Lasso-DeePC on the disk.

    At step ``t`` the angle ``y_t`` is measured, the DeePC problem is solved
    with the window of the last ``rho`` applied inputs and measured outputs,
    the first predicted input is applied for one sample, and ``(u_t, y_t)``
    is appended to the window. Infeasible steps hold the previous input;
    with ``stop_on_infeasible`` the run ends at the first one instead and the
    result covers the steps simulated so far.

    Raises:
        PlantDivergence: if ``|y_t|`` exceeds 1e3.
    """
    if T_sim < 1:
        raise ValueError("T_sim must be at least 1")
    problem.check_data(data)
    if (problem.n_u, problem.n_y) != (1, 1):
        raise ValueError("the disk has one input and one output")
    rho, L = problem.rho, problem.horizon
    ctrl = DeePCController(problem, data, tolerances)
    y0 = float(reference.y(0))
    u0 = float(reference.u(0))
    state = (initial_state or DiskState(y0, 0.0)).as_array()
    z_ini_policy = ZIniPolicy(z_ini_policy)
    if z_ini_policy is ZIniPolicy.FROM_INITIAL_REFERENCE:
        u_win, y_win = [u0] * rho, [y0] * rho
    else:
        u_win, y_win = [], []
        for _ in range(rho):
            y_win.append(float(state[0]))
            u_win.append(u0)
            state = rk4_step(state, u0, params, params.sample_time)

    labels = tuple(data.groups)
    u_hist, y_hist = np.empty(T_sim), np.empty(T_sim)
    status: List[str] = []
    norm1 = np.full(T_sim, np.nan)
    masses = np.full((T_sim, len(labels)), np.nan)
    expl = np.full(T_sim, np.nan)
    iters = np.zeros(T_sim, dtype=int)
    selectors = [] if keep_selectors else None
    ws = None
    u_prev = u0

    def partial(n):
        return _result(u_hist[:n], y_hist[:n], reference, status[:n], norm1[:n], masses[:n],
                       labels, expl[:n], iters[:n], selectors)

    for t in range(T_sim):
        y_t = float(state[0])
        if not abs(y_t) <= DIVERGENCE_LIMIT:
            raise PlantDivergence(f"plant output diverged at step {t}: y = {y_t:.3g}", partial(t))
        u_ref, y_ref = reference.horizon(t, L)
        z = np.concatenate([u_win[-rho:], y_win[-rho:]]) if rho else np.zeros(0)
        sol = ctrl.solve(InitialWindow(z), u_ref, y_ref, warm_start=ws)
        iters[t] = sol.qp.iterations if sol.qp is not None else 0
        if sol.optimal:
            u_t = float(sol.u_f[0, 0])
            ws = sol.working_set
            norm1[t] = sol.norm1
            m = group_masses(sol, data)
            masses[t] = [m[j] for j in labels]
            tg = reference.group(t)
            if tg is not None and sol.norm1 > 0:
                expl[t] = explainability_index(sol, data, tg)
        else:
            u_t = u_prev
            log.info("step %d: %s, holding previous input", t, sol.status.value)
        status.append(sol.status.value)
        if selectors is not None:
            selectors.append(sol.g.copy() if sol.optimal else None)
        if progress is not None:
            progress(t, sol)
        u_hist[t], y_hist[t] = u_t, y_t
        if stop_on_infeasible and not sol.optimal:
            return partial(t + 1)
        state = rk4_step(state, u_t, params, params.sample_time)
        u_win.append(u_t)
        y_win.append(y_t)
        u_prev = u_t
    return partial(T_sim)


def _result(u, y, reference, status, norm1, masses, labels, expl, iters, selectors):
    ts = np.arange(len(u))
    u_ref, y_ref = reference.u(ts).astype(float), reference.y(ts).astype(float)
    res = ClosedLoopResult(u.copy(), y.copy(), u_ref, y_ref, list(status), norm1.copy(),
                           masses.copy(), labels, expl.copy(), iterations=iters.copy(),
                           selectors=selectors)
    if len(u):
        res.rmse_u, res.rmse_y = compute_rmse(u, y, u_ref, y_ref)
    return res


@dataclass(frozen=True)
class RunSpec:
    """Everything a closed-loop run needs except the λ_g value."""

    params: DiskParams
    data: BlockDataMatrix
    problem: DeePCProblem
    reference: ReferenceProfile
    T_sim: int = DEFAULT_T_SIM
    z_ini_policy: ZIniPolicy = ZIniPolicy.FROM_INITIAL_REFERENCE


@dataclass(frozen=True)
class SweepRow:
    lambda_g: float
    rmse_u: float
    rmse_y: float
    mean_norm1: float
    mean_expl_index: float
    infeasible_steps: int = 0


DEFAULT_LAMBDA_GRID = tuple(10.0 ** k for k in range(-5, 6))


def sweep_lambda(spec: RunSpec, lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID
                 ) -> List[SweepRow]:
    """One closed-loop run per λ_g value on identical data and reference."""
    grid = list(lambda_grid)
    if not grid:
        raise ValueError("lambda grid is empty")
    rows = []
    for lam in grid:
        prob = replace(spec.problem, lambda_g=float(lam))
        try:
            res = run_closed_loop(spec.params, spec.data, prob, spec.reference, spec.T_sim,
                                  spec.z_ini_policy)
        except PlantDivergence as exc:
            res = exc.result
            log.warning("lambda_g=%g: %s", lam, exc)
        rows.append(SweepRow(float(lam), res.rmse_u, res.rmse_y, res.mean_norm1(),
                             res.mean_expl_index(), res.infeasible_steps))
    return rows


# -- CSV artifacts -------------------------------------------------------------

def write_result_csv(result: ClosedLoopResult, path) -> None:
    """Per-step results: ``step,u_applied,y_measured,u_ref,y_ref,status,norm1_g,mass_group_*``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "u_applied", "y_measured", "u_ref", "y_ref", "status", "norm1_g"]
                   + [f"mass_group_{j}" for j in result.group_labels])
        for t in range(result.T_sim):
            w.writerow([t, repr(float(result.u[t])), repr(float(result.y[t])),
                        repr(float(result.u_ref[t])), repr(float(result.y_ref[t])),
                        result.status[t], repr(float(result.norm1[t]))]
                       + [repr(float(m)) for m in result.masses[t]])


def read_result_csv(path) -> Dict[str, np.ndarray]:
    """Read a results CSV into column arrays (``status`` stays a list of str)."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = list(r)
    cols: Dict[str, object] = {}
    for i, name in enumerate(header):
        vals = [row[i] for row in rows]
        if name == "status":
            cols[name] = vals
        elif name == "step":
            cols[name] = np.array([int(v) for v in vals], dtype=int)
        else:
            cols[name] = np.array([float(v) for v in vals])
    return cols


SWEEP_HEADER = ("lambda_g", "rmse_u", "rmse_y", "mean_norm1", "mean_expl_index")


def write_sweep_csv(rows: Sequence[SweepRow], path, extra: Optional[Sequence[dict]] = None) -> None:
    """Sweep table; ``extra`` adds leading columns per row (e.g. the data structure)."""
    extra_keys = list(extra[0].keys()) if extra else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(extra_keys + list(SWEEP_HEADER))
        for i, row in enumerate(rows):
            lead = [extra[i][k] for k in extra_keys] if extra else []
            w.writerow(lead + [repr(row.lambda_g), repr(row.rmse_u), repr(row.rmse_y),
                               repr(row.mean_norm1), repr(row.mean_expl_index)])


def read_sweep_csv(path) -> List[dict]:
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        out = []
        for row in r:
            out.append({k: (float(v) if k in SWEEP_HEADER else v) for k, v in row.items()})
        return out
