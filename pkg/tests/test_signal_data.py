import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lassodeepc.signal_data import (TRANSITION, DataPartition, MatrixKind, Trajectory,
                                    build_explainable_hankel, build_hankel, build_hankel_blocks,
                                    build_mosaic, build_page, check_partition_length, check_pe,
                                    label_by_nearest_op, partition_length_threshold,
                                    read_partition_csv, read_trajectory_csv,
                                    write_partition_csv, write_trajectory_csv)


def _traj(T, seed=0):
    rng = np.random.default_rng(seed)
    return Trajectory(rng.uniform(-1, 1, T), rng.normal(size=T))


def _row_reduce_rank(M, tol=1e-9):
    """Rank by Gaussian elimination with partial pivoting (independent of SVD)."""
    A = np.array(M, dtype=float)
    rank, rows, cols = 0, A.shape[0], A.shape[1]
    scale = max(np.abs(A).max(), 1.0)
    for c in range(cols):
        if rank == rows:
            break
        p = rank + int(np.argmax(np.abs(A[rank:, c])))
        if abs(A[p, c]) <= tol * scale:
            continue
        A[[rank, p]] = A[[p, rank]]
        A[rank + 1:] -= np.outer(A[rank + 1:, c] / A[rank, c], A[rank])
        rank += 1
    return rank


# -- build_hankel --------------------------------------------------------------

def test_hankel_small_unrolled():
    np.testing.assert_array_equal(build_hankel([1, 2, 3, 4], 2), [[1, 2, 3], [2, 3, 4]])


def test_hankel_benchmark_size():
    assert build_hankel(np.arange(1000.0), 70).shape == (70, 931)


def test_hankel_depth_exceeds_length():
    with pytest.raises(ValueError):
        build_hankel([1.0, 2.0, 3.0], 4)


@settings(max_examples=50, deadline=None)
@given(T=st.integers(1, 40), depth=st.integers(1, 40), n=st.integers(1, 3))
def test_hankel_entries_and_shape(T, depth, n):
    x = np.arange(T * n, dtype=float).reshape(T, n)
    if depth > T:
        with pytest.raises(ValueError):
            build_hankel(x, depth)
        return
    H = build_hankel(x, depth)
    assert H.shape == (n * depth, T - depth + 1)
    for i in range(depth):
        for j in range(T - depth + 1):
            np.testing.assert_array_equal(H[i * n:(i + 1) * n, j], x[i + j])


# -- persistency of excitation ---------------------------------------------------

def test_pe_constant_signal():
    assert check_pe(np.ones(10), 2) == (1, False)


def test_pe_random_signal_matches_row_reduction():
    u = np.random.default_rng(7).uniform(-1, 1, 200)
    rank, pe = check_pe(u, 5)
    assert pe and rank == 5
    assert _row_reduce_rank(build_hankel(u, 5)) == 5


def test_pe_zero_signal():
    for order in (1, 3, 7):
        assert check_pe(np.zeros(20), order) == (0, False)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), order=st.integers(1, 8))
def test_pe_rank_agrees_with_row_reduction(seed, order):
    u = np.random.default_rng(seed).uniform(-1, 1, 60)
    rank, pe = check_pe(u, order)
    assert rank == _row_reduce_rank(build_hankel(u, order))
    assert pe == (rank == order)


# -- partition length ------------------------------------------------------------

@pytest.mark.parametrize("length, ok", [(500, True), (142, False), (143, True)])
def test_partition_length_threshold(length, ok):
    assert partition_length_threshold(40, 30, 2, 1) == 143
    part = DataPartition(((0, length - 1, 1),))
    assert check_partition_length(part, 40, 30, 2, 1) == [ok]


# -- Mosaic ------------------------------------------------------------------------

def test_mosaic_single_range_is_hankel():
    tr = _traj(120)
    mos = build_mosaic(tr, DataPartition(((0, 119, 1),)), 4, 3)
    ref = build_hankel_blocks(tr, 4, 3)
    np.testing.assert_array_equal(mos.stacked, ref.stacked)
    assert mos.groups == [1]
    assert mos.kind is MatrixKind.MOSAIC


def test_mosaic_range_of_window_length_has_one_column():
    tr = _traj(50)
    mos = build_mosaic(tr, DataPartition(((10, 16, 1),)), 4, 3)
    assert mos.n_g == 1


def test_mosaic_two_benchmark_ranges():
    tr = _traj(1000)
    mos = build_mosaic(tr, DataPartition(((0, 499, 1), (500, 999, 2))), 40, 30)
    assert mos.n_g == 862
    assert mos.group_sizes() == {1: 431, 2: 431}


def test_mosaic_short_range_rejected():
    with pytest.raises(ValueError):
        build_mosaic(_traj(50), DataPartition(((0, 5, 1),)), 4, 3)


# -- explainable Hankel ---------------------------------------------------------------

def test_explainable_hankel_benchmark_counts():
    tr = _traj(1000)
    ex = build_explainable_hankel(tr, [500], 40, 30)
    assert ex.n_g == 931
    assert ex.group_sizes() == {1: 431, 2: 431, TRANSITION: 69}
    # columns are those of the plain Hankel matrix
    np.testing.assert_array_equal(ex.stacked, build_hankel_blocks(tr, 40, 30).stacked)


def test_explainable_hankel_no_boundary_or_zero_boundary():
    tr = _traj(100)
    a = build_explainable_hankel(tr, [], 5, 5)
    b = build_explainable_hankel(tr, [0], 5, 5)
    assert a.groups == [1] and b.groups == [1]
    np.testing.assert_array_equal(a.column_groups, b.column_groups)


@settings(max_examples=40, deadline=None)
@given(T=st.integers(20, 200), depth=st.integers(2, 15), cut_frac=st.floats(0.1, 0.9))
def test_explainable_hankel_label_counting(T, depth, cut_frac):
    cut = int(cut_frac * T)
    if not 0 < cut < T or T < depth:
        return
    ex = build_explainable_hankel(_traj(T), [cut], depth - 1, 1)
    starts = np.arange(T - depth + 1)
    expected = np.where(starts + depth - 1 < cut, 1, np.where(starts >= cut, 2, TRANSITION))
    np.testing.assert_array_equal(ex.column_groups, expected)


# -- Page ----------------------------------------------------------------------------

def test_page_benchmark_columns():
    assert build_page(_traj(1000), 40, 30).n_g == 14


def test_page_single_window_is_whole_trajectory():
    tr = _traj(70)
    pg = build_page(tr, 40, 30)
    assert pg.n_g == 1
    np.testing.assert_array_equal(pg.u_f[:, 0], tr.u[40:, 0])
    np.testing.assert_array_equal(pg.z_p[:40, 0], tr.u[:40, 0])
    np.testing.assert_array_equal(pg.z_p[40:, 0], tr.y[:40, 0])
    np.testing.assert_array_equal(pg.y_f[:, 0], tr.y[40:, 0])


def test_page_too_short():
    with pytest.raises(ValueError):
        build_page(_traj(69), 40, 30)


# -- nearest-OP labelling -----------------------------------------------------------------

def test_label_by_nearest_op():
    tr = Trajectory(np.zeros(4), [0.1, 0.2, 1.5, 1.6])
    assert label_by_nearest_op(tr, [0.17, 1.57]).ranges == ((0, 1, 1), (2, 3, 2))


def test_label_single_center():
    tr = Trajectory(np.zeros(4), [0.1, 5.0, -3.0, 1.6])
    assert label_by_nearest_op(tr, [0.0]).ranges == ((0, 3, 1),)


def test_label_tie_goes_to_lower_index():
    tr = Trajectory(np.zeros(1), [1.0])
    assert label_by_nearest_op(tr, [0.0, 2.0]).ranges == ((0, 0, 1),)


# -- partitions and CSV round trips -----------------------------------------------------

def test_partition_rejects_overlap_and_reserved_label():
    with pytest.raises(ValueError):
        DataPartition(((0, 10, 1), (5, 20, 2)))
    with pytest.raises(ValueError):
        DataPartition(((0, 10, TRANSITION),))


def test_trajectory_csv_round_trip_is_bit_exact(tmp_path):
    tr = _traj(57, seed=3)
    write_trajectory_csv(tr, tmp_path / "t.csv")
    back = read_trajectory_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(back.u, tr.u)
    np.testing.assert_array_equal(back.y, tr.y)
    assert back.sample_time == tr.sample_time


def test_partition_csv_round_trip(tmp_path):
    part = DataPartition(((0, 99, 1), (100, 199, 2), (200, 299, 1)))
    write_partition_csv(part, tmp_path / "p.csv")
    assert read_partition_csv(tmp_path / "p.csv") == part
