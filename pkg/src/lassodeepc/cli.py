"""Command-line front end: ``collect``, ``run``, ``sweep`` and ``explain``.

Configuration files are flat ``key = value`` text; ``#`` starts a comment.
Every key is optional (see :data:`DEFAULTS`). Exit codes: 0 success, 1 error,
2 the run finished but at least one step was infeasible.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .closed_loop import (DEFAULT_LAMBDA_GRID, DataStructure, PlantDivergence, ReferenceProfile,
                          RunSpec, ZIniPolicy, benchmark_data, build_structure, run_closed_loop,
                          sweep_lambda, write_result_csv, write_sweep_csv)
from .deepc import (DeePCController, DeePCProblem, InitialWindow, explainability_index,
                    selector_rows, write_selector_csv)
from .plant import DiskParams, ExcitationConfig, collect_regime
from .qp import AssumptionViolated
from .signal_data import (read_partition_csv, read_trajectory_csv, write_partition_csv,
                          write_trajectory_csv)

log = logging.getLogger("lassodeepc")

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2
EXPLICIT_MAX_COLUMNS = 64


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _segments(text: str) -> Tuple[Tuple[int, float], ...]:
    segs = []
    for item in text.split(","):
        if not item.strip():
            continue
        dur, _, target = item.partition(":")
        if not _:
            raise ValueError(f"segment {item.strip()!r} is not 'duration:target'")
        segs.append((int(dur), float(target)))
    return tuple(segs)


def _optional_float(text: str) -> Optional[float]:
    t = text.strip().lower()
    return None if t in ("", "none", "inf", "-inf") else float(t)


@dataclass(frozen=True)
class ExperimentConfig:
    """All settings of one experiment; defaults reproduce the benchmark."""

    alpha1: float = DiskParams.alpha1
    alpha2: float = DiskParams.alpha2
    alpha3: float = DiskParams.alpha3
    sample_time: float = DiskParams.sample_time
    structure: str = DataStructure.BLOCK_HANKEL.value
    structures: Tuple[str, ...] = ()
    op_angles: Tuple[float, ...] = (0.17, 1.57)
    T_d: int = 1000
    seed: int = 0
    amplitude: float = ExcitationConfig.amplitude
    hold: int = ExcitationConfig.hold
    gain: float = ExcitationConfig.gain
    cycles: int = 5
    trajectory: str = ""
    partition: str = ""
    rho: int = 40
    horizon: int = 30
    Q: float = 100.0
    R: float = 1.0
    lambda_g: float = 10.0
    lambda_2: float = 1e-6
    u_min: Optional[float] = -10.0
    u_max: Optional[float] = 10.0
    y_min: Optional[float] = None
    y_max: Optional[float] = None
    reference: Tuple[Tuple[int, float], ...] = ((200, 0.17), (600, 1.57))
    reference_groups: Tuple[float, ...] = ()
    T_sim: int = 800
    z_ini_policy: str = ZIniPolicy.FROM_INITIAL_REFERENCE.value
    lambda_grid: Tuple[float, ...] = DEFAULT_LAMBDA_GRID
    out: str = "."

    def __post_init__(self):
        try:
            DataStructure(self.structure)
            for s in self.structures:
                DataStructure(s)
            ZIniPolicy(self.z_ini_policy)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        checks = [
            (self.T_d > 0, "T_d must be positive"),
            (self.rho >= 0 and self.horizon >= 1, "need rho >= 0 and horizon >= 1"),
            (self.T_sim >= 1, "T_sim must be at least 1"),
            (self.Q > 0 and self.R > 0, "Q and R must be positive"),
            (self.lambda_g > 0 and self.lambda_2 >= 0, "need lambda_g > 0 and lambda_2 >= 0"),
            (len(self.op_angles) >= 1, "op_angles is empty"),
            (len(self.reference) >= 1, "reference is empty"),
            (self.sample_time > 0, "sample_time must be positive"),
            (self.hold >= 1 and self.cycles >= 1, "hold and cycles must be at least 1"),
            (bool(self.trajectory) == bool(self.partition),
             "trajectory and partition files must be given together"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        for path in (self.trajectory, self.partition):
            if path and not Path(path).is_file():
                raise ConfigError(f"referenced file does not exist: {path}")

    # -- derived objects ----------------------------------------------------------
    @property
    def params(self) -> DiskParams:
        return DiskParams(self.alpha1, self.alpha2, self.alpha3, self.sample_time)

    @property
    def excitation(self) -> ExcitationConfig:
        return ExcitationConfig(self.amplitude, self.hold, self.gain)

    def problem(self, lambda_g: Optional[float] = None) -> DeePCProblem:
        return DeePCProblem(self.rho, self.horizon, self.Q, self.R,
                            self.lambda_g if lambda_g is None else lambda_g, self.lambda_2,
                            u_min=self.u_min, u_max=self.u_max,
                            y_min=self.y_min, y_max=self.y_max)

    def reference_profile(self) -> ReferenceProfile:
        if self.reference_groups:
            groups = tuple(int(g) for g in self.reference_groups)
        else:   # group of the nearest operating angle
            ops = np.asarray(self.op_angles)
            groups = tuple(int(np.argmin(np.abs(ops - y))) + 1 for _, y in self.reference)
        try:
            return ReferenceProfile(self.reference, groups, self.params)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def collect(self, structure: Optional[str] = None):
        """Trajectory, partition and data matrix for ``structure``."""
        st = DataStructure(structure or self.structure)
        if self.trajectory:
            traj = read_trajectory_csv(self.trajectory)
            part = read_partition_csv(self.partition)
            return traj, part, build_structure(st, traj, part, self.rho, self.horizon)
        if self.cycles != 5 and st is DataStructure.TWO_OP_HANKEL:
            traj, part = collect_regime(st.regime, self.op_angles, self.T_d, self.seed,
                                        self.params, self.excitation, self.cycles)
            return traj, part, build_structure(st, traj, part, self.rho, self.horizon)
        return benchmark_data(st, self.op_angles, self.T_d, self.seed, self.rho, self.horizon,
                              self.params, self.excitation)


_PARSERS = {
    "op_angles": _floats, "lambda_grid": _floats, "reference_groups": _floats,
    "reference": _segments,
    "structures": lambda t: tuple(s.strip() for s in t.split(",") if s.strip()),
    "u_min": _optional_float, "u_max": _optional_float,
    "y_min": _optional_float, "y_max": _optional_float,
}

DEFAULTS: Dict[str, object] = {f.name: f.default for f in fields(ExperimentConfig)}


def parse_config(text: str) -> ExperimentConfig:
    """Parse flat ``key = value`` text into an :class:`ExperimentConfig`."""
    kinds = {f.name: type(f.default) for f in fields(ExperimentConfig)}
    values: Dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in kinds:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            if key in _PARSERS:
                values[key] = _PARSERS[key](val)
            elif kinds[key] is int:
                values[key] = int(val)
            elif kinds[key] is float:
                values[key] = float(val)
            else:
                values[key] = val
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return ExperimentConfig(**values)


def load_config(path: Optional[str], seed: Optional[int] = None,
                out: Optional[str] = None, lambda_grid: Optional[str] = None) -> ExperimentConfig:
    """Read a config file (or the defaults) and apply command-line overrides."""
    text = ""
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        text = p.read_text()
    cfg = parse_config(text)
    over = {}
    if seed is not None:
        over["seed"] = seed
    if out is not None:
        over["out"] = out
    if lambda_grid is not None:
        try:
            over["lambda_grid"] = _floats(lambda_grid)
        except ValueError as exc:
            raise ConfigError(f"bad --lambda-grid: {exc}") from exc
    return replace(cfg, **over) if over else cfg


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    if not out.is_dir():
        raise ConfigError(f"output directory does not exist: {out}")
    return out


# -- commands --------------------------------------------------------------------

def cmd_collect(cfg: ExperimentConfig) -> int:
    out = _out_dir(cfg)
    traj, part, _ = cfg.collect()
    write_trajectory_csv(traj, out / "trajectory.csv")
    write_partition_csv(part, out / "partition.csv")
    print(f"wrote {out / 'trajectory.csv'} ({traj.length} samples) and "
          f"{out / 'partition.csv'} ({len(part.ranges)} ranges)")
    return EXIT_OK


def _closed_loop(cfg, data, problem, T_sim=None, keep_selectors=False):
    try:
        return run_closed_loop(cfg.params, data, problem, cfg.reference_profile(),
                               T_sim or cfg.T_sim, ZIniPolicy(cfg.z_ini_policy),
                               keep_selectors=keep_selectors), None
    except PlantDivergence as exc:
        return exc.result, str(exc)


def cmd_run(cfg: ExperimentConfig) -> int:
    out = _out_dir(cfg)
    _, _, data = cfg.collect()
    result, diverged = _closed_loop(cfg, data, cfg.problem())
    write_result_csv(result, out / "result.csv")
    print(f"rmse_u={result.rmse_u:.6g} rmse_y={result.rmse_y:.6g} "
          f"infeasible_steps={result.infeasible_steps} steps={result.T_sim}")
    if diverged:
        print(f"error: {diverged}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_INFEASIBLE if result.infeasible_steps else EXIT_OK


def cmd_sweep(cfg: ExperimentConfig) -> int:
    out = _out_dir(cfg)
    if not cfg.lambda_grid:
        raise ConfigError("lambda grid is empty")
    rows, extra = [], []
    for st in cfg.structures or (cfg.structure,):
        _, _, data = cfg.collect(st)
        spec = RunSpec(cfg.params, data, cfg.problem(), cfg.reference_profile(), cfg.T_sim,
                       ZIniPolicy(cfg.z_ini_policy))
        for row in sweep_lambda(spec, cfg.lambda_grid):
            rows.append(row)
            extra.append({"structure": st})
            print(f"{st} lambda_g={row.lambda_g:g} rmse_u={row.rmse_u:.6g} "
                  f"rmse_y={row.rmse_y:.6g} infeasible_steps={row.infeasible_steps}")
    write_sweep_csv(rows, out / "sweep.csv", extra)
    return EXIT_OK


def cmd_explain(cfg: ExperimentConfig, step: int) -> int:
    out = _out_dir(cfg)
    if not 0 <= step < cfg.T_sim:
        raise ConfigError(f"step {step} outside 0..{cfg.T_sim - 1}")
    _, _, data = cfg.collect()
    problem = cfg.problem()
    result, diverged = _closed_loop(cfg, data, problem, T_sim=step + 1, keep_selectors=True)
    if diverged or result.T_sim <= step:
        raise ConfigError(f"closed loop ended before step {step}: {diverged}")
    g = result.selectors[step]
    if g is None:
        print(f"step {step}: solver status {result.status[step]}, no selector", file=sys.stderr)
        return EXIT_INFEASIBLE
    # re-solve the step to obtain the full solution object
    ref = cfg.reference_profile()
    u_ref, y_ref = ref.horizon(step, problem.horizon)
    rho = problem.rho
    z = (np.concatenate([_window(result.u, step, rho, ref.u(0)),
                         _window(result.y, step, rho, ref.y(0))]) if rho else np.zeros(0))
    sol = DeePCController(problem, data).solve(InitialWindow(z), u_ref, y_ref)
    write_selector_csv(selector_rows(step, sol, data), out / f"selector_step{step}.csv")
    lines = [f"step={step}", f"status={sol.status.value}", f"norm1_g={sol.norm1!r}"]
    target = ref.group(step)
    try:
        lines.append(f"explainability_index={explainability_index(sol, data, target)!r}")
    except ValueError as exc:
        lines.append(f"explainability_index=nan ({exc})")
    lines.append(f"target_group={target}")
    if data.n_g <= EXPLICIT_MAX_COLUMNS:
        lines += _explicit_dump(sol, data, problem.with_reference(u_ref, y_ref),
                                out / f"region_step{step}.csv")
    (out / f"explain_step{step}.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def _window(signal, step, rho, initial):
    """The ``rho`` samples before ``step`` as seen by the controller."""
    pad = max(rho - step, 0)
    return np.concatenate([np.full(pad, float(initial)), np.asarray(signal[max(step - rho, 0):step])])


def _explicit_dump(sol, data, problem, path) -> List[str]:
    from .explicit import extract_certificate, local_affine_law, write_region
    try:
        cert = extract_certificate(sol)
        region = local_affine_law(cert, data, problem)
    except (AssumptionViolated, np.linalg.LinAlgError) as exc:
        return [f"explicit_law=unavailable ({exc})"]
    write_region(region, path)
    residual = float(np.max(np.abs(region.evaluate(sol.z_ini) - sol.g), initial=0.0))
    return [f"explicit_region={path.name}", f"explicit_residual={residual!r}",
            f"explicit_region_contains_z_ini={region.contains(sol.z_ini, 1e-7)}"]


# -- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lassodeepc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("collect", "collect benchmark data (trajectory + partition CSV)"),
                           ("run", "run one closed-loop experiment (result CSV)"),
                           ("sweep", "closed loop for every lambda_g of a grid (sweep CSV)"),
                           ("explain", "dump the selector and explainability at one step")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="flat key=value configuration file")
        p.add_argument("--seed", type=int, help="data-collection seed (overrides config)")
        p.add_argument("--out", help="existing output directory (overrides config)")
        if name == "sweep":
            p.add_argument("--lambda-grid", help="comma-separated lambda_g values")
        if name == "explain":
            p.add_argument("--step", type=int, required=True, help="closed-loop step index")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:   # argparse usage errors
        return EXIT_ERROR if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed, args.out, getattr(args, "lambda_grid", None))
        if args.command == "collect":
            return cmd_collect(cfg)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        return cmd_explain(cfg, args.step)
    except (ConfigError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
