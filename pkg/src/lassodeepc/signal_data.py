"""Trajectories, data partitions and the block data matrices used by DeePC.

All signals are stored sample-major: an array of shape ``(T, n)`` holds ``T``
samples of an ``n``-dimensional signal. Hankel-type matrices follow the usual
layout where column ``j`` is the flattened window ``signal[j : j + depth]``.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

# Group label given to columns whose window straddles two operating ranges.
TRANSITION = 0

PE_RANK_RTOL = 1e-9


def as_signal(signal) -> np.ndarray:
    """Return ``signal`` as a float array of shape (T, n)."""
    arr = np.asarray(signal, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"signal must be 1-D or 2-D, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class Trajectory:
    """Sampled input/output record.

    Attributes:
        u: Inputs, shape (T, n_u).
        y: Outputs, shape (T, n_y).
        sample_time: Sampling period in seconds.
    """

    u: np.ndarray
    y: np.ndarray
    sample_time: float = 0.01

    def __post_init__(self):
        u = as_signal(self.u)
        y = as_signal(self.y)
        if u.shape[0] != y.shape[0]:
            raise ValueError(f"u and y lengths differ: {u.shape[0]} != {y.shape[0]}")
        if u.shape[0] < 1:
            raise ValueError("empty trajectory")
        if not self.sample_time > 0:
            raise ValueError("sample_time must be positive")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(y))):
            raise ValueError("trajectory contains non-finite entries")
        u.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sample_time", float(self.sample_time))

    @property
    def length(self) -> int:
        return self.u.shape[0]

    @property
    def n_u(self) -> int:
        return self.u.shape[1]

    @property
    def n_y(self) -> int:
        return self.y.shape[1]

    @property
    def time(self) -> np.ndarray:
        return np.arange(self.length) * self.sample_time

    def slice(self, start: int, stop: int) -> "Trajectory":
        """Samples ``start..stop`` inclusive."""
        return Trajectory(self.u[start:stop + 1], self.y[start:stop + 1], self.sample_time)


@dataclass(frozen=True)
class DataPartition:
    """Disjoint index ranges of a trajectory, each tagged with an operating point.

    ``ranges`` holds ``(start, stop, label)`` triples with inclusive ``stop``.
    Labels are positive integers (1-based operating-point ids).
    """

    ranges: Tuple[Tuple[int, int, int], ...]

    def __post_init__(self):
        ranges = tuple((int(a), int(b), int(lab)) for a, b, lab in self.ranges)
        for a, b, lab in ranges:
            if a < 0 or b < a:
                raise ValueError(f"invalid range ({a}, {b})")
            if lab == TRANSITION:
                raise ValueError(f"label {TRANSITION} is reserved for transition columns")
        ordered = sorted(ranges)
        for (a0, b0, _), (a1, b1, _) in zip(ordered, ordered[1:]):
            if a1 <= b0:
                raise ValueError(f"ranges ({a0}, {b0}) and ({a1}, {b1}) overlap")
        object.__setattr__(self, "ranges", ranges)

    def __len__(self):
        return len(self.ranges)

    @property
    def lengths(self) -> List[int]:
        return [b - a + 1 for a, b, _ in self.ranges]

    @property
    def labels(self) -> List[int]:
        return [lab for _, _, lab in self.ranges]

    def validate_for(self, length: int) -> None:
        for a, b, _ in self.ranges:
            if b > length - 1:
                raise ValueError(f"range ({a}, {b}) exceeds trajectory length {length}")

    @classmethod
    def from_boundaries(cls, boundaries: Sequence[int], length: int,
                        labels: Optional[Sequence[int]] = None) -> "DataPartition":
        """Tile ``[0, length-1]`` with ranges starting at each boundary.

        A boundary at 0 is implicit. Labels default to 1, 2, ...
        """
        cuts = sorted({int(b) for b in boundaries} - {0})
        for b in cuts:
            if not 0 < b <= length - 1:
                raise ValueError(f"boundary {b} outside [0, {length - 1}]")
        starts = [0] + cuts
        stops = [b - 1 for b in cuts] + [length - 1]
        if labels is None:
            labels = range(1, len(starts) + 1)
        labels = list(labels)
        if len(labels) != len(starts):
            raise ValueError(f"expected {len(starts)} labels, got {len(labels)}")
        return cls(tuple(zip(starts, stops, labels)))


class MatrixKind(enum.Enum):
    HANKEL = "hankel"
    MOSAIC = "mosaic"
    EXPLAINABLE_HANKEL = "explainable_hankel"
    PAGE = "page"


@dataclass(frozen=True)
class BlockDataMatrix:
    """Stacked DeePC data blocks ``[Z_P; U_F; Y_F]`` with column group labels.

    ``z_p`` stacks the past inputs over the past outputs (``U_P`` over ``Y_P``),
    matching the layout of the initial window ``[u_ini; y_ini]``.
    """

    z_p: np.ndarray
    u_f: np.ndarray
    y_f: np.ndarray
    column_groups: np.ndarray
    kind: MatrixKind
    rho: int
    horizon: int
    n_u: int
    n_y: int

    def __post_init__(self):
        n_g = self.u_f.shape[1]
        groups = np.asarray(self.column_groups, dtype=int)
        if self.z_p.shape != (self.rho * (self.n_u + self.n_y), n_g):
            raise ValueError(f"z_p block has shape {self.z_p.shape}")
        if self.u_f.shape != (self.horizon * self.n_u, n_g):
            raise ValueError(f"u_f block has shape {self.u_f.shape}")
        if self.y_f.shape != (self.horizon * self.n_y, n_g):
            raise ValueError(f"y_f block has shape {self.y_f.shape}")
        if groups.shape != (n_g,):
            raise ValueError("column_groups must have one label per column")
        for name in ("z_p", "u_f", "y_f"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        groups.setflags(write=False)
        object.__setattr__(self, "column_groups", groups)

    @property
    def n_g(self) -> int:
        return self.u_f.shape[1]

    @property
    def groups(self) -> List[int]:
        """Distinct group labels in order of first appearance."""
        _, idx = np.unique(self.column_groups, return_index=True)
        return [int(self.column_groups[i]) for i in sorted(idx)]

    def group_sizes(self) -> dict:
        return {g: int(np.sum(self.column_groups == g)) for g in self.groups}

    @property
    def stacked(self) -> np.ndarray:
        return np.vstack([self.z_p, self.u_f, self.y_f])

    def relabeled(self, column_groups) -> "BlockDataMatrix":
        """Same numeric blocks with different column labels."""
        return BlockDataMatrix(self.z_p, self.u_f, self.y_f, np.asarray(column_groups),
                               self.kind, self.rho, self.horizon, self.n_u, self.n_y)


def build_hankel(signal, depth: int) -> np.ndarray:
    """Block Hankel matrix of ``signal`` with ``depth`` block rows.

    Args:
        signal: Array of shape (T,) or (T, n).
        depth: Number of block rows.

    Returns:
        Array of shape (n * depth, T - depth + 1) whose block (i, j) is
        ``signal[i + j]``.

    Raises:
        ValueError: If ``depth`` exceeds the signal length.

    Examples:
        >>> build_hankel([1, 2, 3, 4], 2)
        array([[1., 2., 3.],
               [2., 3., 4.]])
    """
    x = as_signal(signal)
    T, n = x.shape
    if depth < 1:
        raise ValueError("depth must be at least 1")
    if depth > T:
        raise ValueError(f"insufficient data: depth {depth} exceeds signal length {T}")
    windows = np.lib.stride_tricks.sliding_window_view(x, depth, axis=0)
    # windows: (T - depth + 1, n, depth) -> rows ordered sample-major
    return np.ascontiguousarray(windows.transpose(2, 1, 0).reshape(depth * n, T - depth + 1))


def numerical_rank(mat: np.ndarray, rtol: float = PE_RANK_RTOL) -> int:
    if mat.size == 0:
        return 0
    s = np.linalg.svd(mat, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def check_pe(signal, order: int) -> Tuple[int, bool]:
    """Persistency-of-excitation test.

    The signal is PE of ``order`` when its depth-``order`` Hankel matrix has
    rank ``n * order``; singular values below ``1e-9`` times the largest are
    treated as zero.
    """
    x = as_signal(signal)
    rank = numerical_rank(build_hankel(x, order))
    return rank, rank == x.shape[1] * order


def partition_length_threshold(rho: int, horizon: int, order_n: int, n_u: int) -> int:
    return (n_u + 1) * (rho + horizon + order_n) - 1


def check_partition_length(partition: DataPartition, rho: int, horizon: int,
                           order_n: int, n_u: int) -> List[bool]:
    """Per-range flag: is the range long enough to be PE of order rho+L+n?"""
    need = partition_length_threshold(rho, horizon, order_n, n_u)
    return [length >= need for length in partition.lengths]


def _split_blocks(hu: np.ndarray, hy: np.ndarray, rho: int, n_u: int, n_y: int):
    up, uf = hu[:rho * n_u], hu[rho * n_u:]
    yp, yf = hy[:rho * n_y], hy[rho * n_y:]
    return np.vstack([up, yp]), uf, yf


def _from_hankels(hu, hy, groups, kind, rho, horizon, n_u, n_y) -> BlockDataMatrix:
    z_p, u_f, y_f = _split_blocks(hu, hy, rho, n_u, n_y)
    return BlockDataMatrix(z_p, u_f, y_f, np.asarray(groups, dtype=int), kind,
                           rho, horizon, n_u, n_y)


def build_hankel_blocks(trajectory: Trajectory, rho: int, horizon: int,
                        group: int = 1) -> BlockDataMatrix:
    """Plain Hankel predictor blocks from the whole trajectory, one group."""
    depth = rho + horizon
    if trajectory.length < depth:
        raise ValueError(f"insufficient data: need {depth} samples, have {trajectory.length}")
    hu = build_hankel(trajectory.u, depth)
    hy = build_hankel(trajectory.y, depth)
    groups = np.full(hu.shape[1], group)
    return _from_hankels(hu, hy, groups, MatrixKind.HANKEL, rho, horizon,
                         trajectory.n_u, trajectory.n_y)


def build_mosaic(trajectory: Trajectory, partition: DataPartition, rho: int,
                 horizon: int) -> BlockDataMatrix:
    """Concatenate the per-range Hankel matrices side by side.

    Each column is labeled with the label of the range it was built from.
    """
    partition.validate_for(trajectory.length)
    depth = rho + horizon
    hus, hys, groups = [], [], []
    for idx, (a, b, label) in enumerate(partition.ranges):
        if b - a + 1 < depth:
            raise ValueError(f"range #{idx} ({a}, {b}) is shorter than rho+L={depth}")
        hu = build_hankel(trajectory.u[a:b + 1], depth)
        hus.append(hu)
        hys.append(build_hankel(trajectory.y[a:b + 1], depth))
        groups.append(np.full(hu.shape[1], label))
    return _from_hankels(np.hstack(hus), np.hstack(hys), np.concatenate(groups),
                         MatrixKind.MOSAIC, rho, horizon, trajectory.n_u, trajectory.n_y)


def _window_labels(starts: np.ndarray, width: int, partition: DataPartition,
                   length: int) -> np.ndarray:
    owner = np.full(length, TRANSITION)
    for a, b, label in partition.ranges:
        owner[a:b + 1] = label
    # a column keeps its range label only if every sample in its window shares it
    labels = np.empty(len(starts), dtype=int)
    for k, s in enumerate(starts):
        window = owner[s:s + width]
        labels[k] = window[0] if np.all(window == window[0]) else TRANSITION
    return labels


def _coerce_partition(boundaries, length: int) -> DataPartition:
    if isinstance(boundaries, DataPartition):
        boundaries.validate_for(length)
        return boundaries
    for b in boundaries:
        if not 0 <= int(b) <= length - 1:
            raise ValueError(f"boundary {b} outside [0, {length - 1}]")
    return DataPartition.from_boundaries(boundaries, length)


def build_explainable_hankel(trajectory: Trajectory,
                             boundaries: Union[DataPartition, Iterable[int]],
                             rho: int, horizon: int) -> BlockDataMatrix:
    """Full Hankel matrix whose columns carry operating-point labels.

    ``boundaries`` is either a :class:`DataPartition` or the sample indices at
    which the operating point switches (ranges are then labeled 1, 2, ...).
    Columns whose window spans more than one range get :data:`TRANSITION`.
    """
    partition = _coerce_partition(boundaries, trajectory.length)
    depth = rho + horizon
    if trajectory.length < depth:
        raise ValueError(f"insufficient data: need {depth} samples, have {trajectory.length}")
    hu = build_hankel(trajectory.u, depth)
    hy = build_hankel(trajectory.y, depth)
    labels = _window_labels(np.arange(hu.shape[1]), depth, partition, trajectory.length)
    return _from_hankels(hu, hy, labels, MatrixKind.EXPLAINABLE_HANKEL, rho, horizon,
                         trajectory.n_u, trajectory.n_y)


def build_page(trajectory: Trajectory, rho: int, horizon: int,
               boundaries: Union[DataPartition, Iterable[int]] = ()) -> BlockDataMatrix:
    """Page matrix: non-overlapping windows of length rho+L.

    Trailing samples that do not fill a whole window are dropped.
    """
    depth = rho + horizon
    T = trajectory.length
    if T < depth:
        raise ValueError(f"insufficient data: need {depth} samples, have {T}")
    partition = _coerce_partition(boundaries, T)
    n_cols = T // depth
    starts = np.arange(n_cols) * depth

    def page(x):
        return x[:n_cols * depth].reshape(n_cols, depth * x.shape[1]).T

    labels = _window_labels(starts, depth, partition, T)
    return _from_hankels(page(trajectory.u), page(trajectory.y), labels, MatrixKind.PAGE,
                         rho, horizon, trajectory.n_u, trajectory.n_y)


def label_by_nearest_op(trajectory: Trajectory, centers) -> DataPartition:
    """Label each sample by its nearest center in output space.

    Maximal runs of equal labels become ranges; label ``k`` means
    ``centers[k-1]``. Ties go to the lower center index.
    """
    c = np.asarray(centers, dtype=float)
    if c.ndim == 1:
        c = c[:, None]
    if c.shape[0] < 1:
        raise ValueError("need at least one center")
    if c.shape[1] != trajectory.n_y:
        raise ValueError("centers must live in output space")
    dist = np.linalg.norm(trajectory.y[:, None, :] - c[None, :, :], axis=2)
    labels = np.argmin(dist, axis=1) + 1  # argmin returns first minimum
    change = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], change])
    stops = np.concatenate([change - 1, [trajectory.length - 1]])
    return DataPartition(tuple(zip(starts, stops, labels[starts])))


# -- CSV --------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_trajectory_csv(trajectory: Trajectory, path) -> None:
    path = Path(path)
    header = (["t"] + [f"u_{i}" for i in range(trajectory.n_u)]
              + [f"y_{i}" for i in range(trajectory.n_y)])
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(trajectory.length):
            t = f"{k * trajectory.sample_time:.9f}"
            w.writerow([t] + [_fmt(v) for v in trajectory.u[k]] + [_fmt(v) for v in trajectory.y[k]])


def read_trajectory_csv(path) -> Trajectory:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not body:
        raise ValueError(f"{path}: no samples")
    iu = [i for i, h in enumerate(header) if h.startswith("u_")]
    iy = [i for i, h in enumerate(header) if h.startswith("y_")]
    data = np.array([[float(v) for v in r] for r in body])
    ts = data[1, 0] - data[0, 0] if len(body) > 1 else 0.01
    return Trajectory(data[:, iu], data[:, iy], round(ts, 9))


def write_partition_csv(partition: DataPartition, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["start", "stop", "label"])
        w.writerows(partition.ranges)


def read_partition_csv(path) -> DataPartition:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return DataPartition(tuple(tuple(int(v) for v in r) for r in rows))
