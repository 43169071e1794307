"""Unbalanced-disk benchmark plant, data-collection experiments and an LTI test plant.

The disk obeys ``theta'' = a1*cos(theta) + a2*theta' + a3*u`` and is sampled
with a zero-order hold on the input; one sample is one classical RK4 step.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .signal_data import DataPartition, Trajectory

HOLD_SAMPLES = 5


@dataclass(frozen=True)
class DiskParams:
    alpha1: float = 127.37   # rad s^-2
    alpha2: float = -2.50    # s^-1
    alpha3: float = 26.25    # rad V^-1 s^-2
    sample_time: float = 0.01

    def __post_init__(self):
        if not self.sample_time > 0:
            raise ValueError("sample_time must be positive")


@dataclass(frozen=True)
class DiskState:
    angle: float
    rate: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.angle, self.rate])


def _disk_rhs(x: np.ndarray, u: float, p: DiskParams) -> np.ndarray:
    return np.array([x[1], p.alpha1 * np.cos(x[0]) + p.alpha2 * x[1] + p.alpha3 * u])


def rk4_step(x: np.ndarray, u: float, params: DiskParams, h: float) -> np.ndarray:
    k1 = _disk_rhs(x, u, params)
    k2 = _disk_rhs(x + 0.5 * h * k1, u, params)
    k3 = _disk_rhs(x + 0.5 * h * k2, u, params)
    k4 = _disk_rhs(x + h * k3, u, params)
    return x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def disk_step(state: DiskState, u: float, params: DiskParams = DiskParams()) -> DiskState:
    """Advance the disk by one sample with ``u`` held constant."""
    x = rk4_step(state.as_array(), float(u), params, params.sample_time)
    return DiskState(float(x[0]), float(x[1]))


def equilibrium_input(y_eq: float, params: DiskParams = DiskParams()) -> float:
    """Input voltage that makes the angle ``y_eq`` an equilibrium."""
    return -params.alpha1 * np.cos(y_eq) / params.alpha3


@dataclass(frozen=True)
class ExcitationConfig:
    """Data-collection experiment settings.

    The perturbation is uniform in ``[-amplitude, amplitude]`` volts, redrawn
    every ``hold`` samples, and added to the equilibrium input of the current
    target plus a proportional correction ``gain * (target - angle)``.
    """

    amplitude: float = 1.5
    hold: int = HOLD_SAMPLES
    gain: float = 5.0


def excite_schedule(targets: Sequence[float], seed: int, params: DiskParams = DiskParams(),
                    config: ExcitationConfig = ExcitationConfig(),
                    initial: DiskState = None) -> Trajectory:
    """Excite the disk while it is steered through per-sample target angles.

    The recorded output at sample ``k`` is the angle measured before the
    input of sample ``k`` is applied.
    """
    targets = np.asarray(targets, dtype=float)
    if config.amplitude < 0:
        raise ValueError("amplitude must be nonnegative")
    T = len(targets)
    if T < 1:
        raise ValueError("duration must be at least 1")
    rng = np.random.default_rng(seed)
    n_draws = -(-T // config.hold)
    pert = np.repeat(rng.uniform(-config.amplitude, config.amplitude, n_draws), config.hold)[:T]
    if initial is None:
        initial = DiskState(float(targets[0]), 0.0)
    x = initial.as_array()
    u = np.empty(T)
    y = np.empty(T)
    for k in range(T):
        y[k] = x[0]
        u[k] = (equilibrium_input(targets[k], params) + config.gain * (targets[k] - x[0])
                + pert[k])
        x = rk4_step(x, u[k], params, params.sample_time)
    return Trajectory(u, y, params.sample_time)


def excite_around_op(op_angle: float, amplitude: float, duration: int, seed: int,
                     params: DiskParams = DiskParams(), gain: float = 5.0) -> Trajectory:
    """Excite the disk around one operating angle, starting at rest there."""
    cfg = ExcitationConfig(amplitude=amplitude, gain=gain)
    return excite_schedule(np.full(int(duration), op_angle), seed, params, cfg)


class Regime(enum.Enum):
    SINGLE_OP = "single_op"
    TWO_OP_CYCLES = "two_op_cycles"
    TWO_OP_SINGLE_TRANSITION = "two_op_single_transition"


def regime_partition(regime: Regime, T_d: int, cycles: int = 5) -> DataPartition:
    regime = Regime(regime)
    if regime is Regime.SINGLE_OP:
        return DataPartition(((0, T_d - 1, 1),))
    if regime is Regime.TWO_OP_SINGLE_TRANSITION:
        half = T_d // 2
        return DataPartition(((0, half - 1, 1), (half, T_d - 1, 2)))
    seg = T_d // (2 * cycles)
    if seg < 1:
        raise ValueError(f"T_d={T_d} too short for {cycles} cycles")
    ranges = [(k * seg, (k + 1) * seg - 1, 1 + k % 2) for k in range(2 * cycles)]
    a, _, lab = ranges[-1]
    ranges[-1] = (a, T_d - 1, lab)
    return DataPartition(tuple(ranges))


def collect_regime(regime: Regime, op_angles: Sequence[float], T_d: int, seed: int,
                   params: DiskParams = DiskParams(),
                   config: ExcitationConfig = ExcitationConfig(),
                   cycles: int = 5) -> Tuple[Trajectory, DataPartition]:
    """Run one of the three data-collection experiments.

    Returns the recorded trajectory and the partition of its samples by the
    operating point that was commanded.
    """
    regime = Regime(regime)
    op_angles = list(op_angles)
    if not op_angles:
        raise ValueError("need at least one operating angle")
    if regime is not Regime.SINGLE_OP and len(op_angles) < 2:
        raise ValueError(f"{regime.value} needs two operating angles")
    partition = regime_partition(regime, T_d, cycles)
    targets = np.empty(T_d)
    for a, b, label in partition.ranges:
        targets[a:b + 1] = op_angles[label - 1]
    return excite_schedule(targets, seed, params, config), partition


# -- LTI test plant ----------------------------------------------------------
# x+ = A x + B u, y = C x; poles of z^2 - 1.5 z + 0.7 have modulus sqrt(0.7).
LTI_A = np.array([[1.5, -0.7], [1.0, 0.0]])
LTI_B = np.array([[1.0], [0.0]])
LTI_C = np.array([[1.0, 0.5]])
LTI_D = np.array([[0.0]])
LTI_ORDER = 2


def lti_oracle_step(state: np.ndarray, u) -> Tuple[np.ndarray, np.ndarray]:
    """One step of the test plant: returns (next state, output at this step)."""
    x = np.asarray(state, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    y = LTI_C @ x + LTI_D @ u
    return LTI_A @ x + LTI_B @ u, y


def lti_oracle_response(state, u_seq) -> Tuple[np.ndarray, np.ndarray]:
    """Simulate the test plant from ``state`` under inputs ``u_seq`` (T, 1).

    Returns the outputs (T, 1) and the final state.
    """
    x = np.asarray(state, dtype=float)
    u_seq = np.asarray(u_seq, dtype=float).reshape(-1, 1)
    ys = np.empty((len(u_seq), 1))
    for k, u in enumerate(u_seq):
        x, ys[k] = lti_oracle_step(x, u)
    return ys, x
