import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lassodeepc.qp import (ActiveSetSolver, AssumptionViolated, QuadraticProgram, Status,
                           WorkingSet, kkt_residuals, solve_kkt_for_active_set, solve_qp)


def _random_qp(seed, n=20, m_eq=3, m_in=6, bounds=False):
    """Strictly convex QP with a known strictly feasible point."""
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    H = M @ M.T + 0.5 * np.eye(n)
    x0 = rng.uniform(0.1, 1.0, n)
    A_eq = rng.normal(size=(m_eq, n))
    A_in = rng.normal(size=(m_in, n))
    b_in = A_in @ x0 + rng.uniform(0.0, 0.5, m_in)
    # pull the unconstrained minimizer away from x0 so that rows become active
    f = -H @ (x0 + 3.0 * rng.normal(size=n))
    return QuadraticProgram(H, f, A_eq, A_eq @ x0, A_in, b_in,
                            np.zeros(n) if bounds else None), x0


def _enumerate_optimum(p: QuadraticProgram):
    """Exhaustive active-set oracle (inequality rows only, no bounds)."""
    n, m_eq, m_in = p.n, p.eq_matrix.shape[0], p.ineq_matrix.shape[0]
    best = None
    for k in range(m_in + 1):
        for S in itertools.combinations(range(m_in), k):
            C = np.vstack([p.eq_matrix, p.ineq_matrix[list(S)]])
            K = np.block([[p.hessian, C.T], [C, np.zeros((C.shape[0], C.shape[0]))]])
            rhs = np.concatenate([-p.linear_cost, p.eq_rhs, p.ineq_rhs[list(S)]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            x, mu = sol[:n], sol[n + m_eq:]
            if np.all(p.ineq_matrix @ x <= p.ineq_rhs + 1e-9) and np.all(mu >= -1e-9):
                val = p.objective(x)
                if best is None or val < best[1]:
                    best = (x, val)
    return best


# -- hand examples -------------------------------------------------------------

def test_projection_onto_equality():
    p = QuadraticProgram(2 * np.eye(2), np.zeros(2), [[1.0, 0.0]], [1.0])
    sol = solve_qp(p)
    assert sol.status is Status.OPTIMAL
    np.testing.assert_allclose(sol.x, [1.0, 0.0], atol=1e-10)


def test_scalar_inequality_dual():
    # x^2 - 2x = 1/2 (2) x^2 + (-2) x, subject to x <= 0
    sol = solve_qp(QuadraticProgram([[2.0]], [-2.0], ineq_matrix=[[1.0]], ineq_rhs=[0.0]))
    assert sol.optimal
    assert abs(sol.x[0]) < 1e-12
    assert abs(sol.ineq_duals[0] - 2.0) < 1e-10


def test_unconstrained():
    H = np.array([[4.0, 1.0], [1.0, 3.0]])
    f = np.array([1.0, -2.0])
    sol = solve_qp(QuadraticProgram(H, f))
    np.testing.assert_allclose(sol.x, -np.linalg.solve(H, f), atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_random_20_variable_qp_matches_enumeration(seed):
    p, _ = _random_qp(seed)
    oracle = _enumerate_optimum(p)
    sol = solve_qp(p)
    assert sol.optimal
    np.testing.assert_allclose(sol.x, oracle[0], atol=1e-5)


def test_nonnegativity_bounds():
    # minimize (x - (1, -1))^2 over x >= 0 -> (1, 0), bound dual 2 on the second entry
    sol = solve_qp(QuadraticProgram(2 * np.eye(2), [-2.0, 2.0], lower_bounds=[0.0, 0.0]))
    np.testing.assert_allclose(sol.x, [1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(sol.bound_duals, [0.0, 2.0], atol=1e-10)


def test_infeasible_problem():
    p = QuadraticProgram(np.eye(1), [0.0], ineq_matrix=[[1.0], [-1.0]], ineq_rhs=[-1.0, -1.0])
    sol = solve_qp(p)
    assert sol.status is Status.INFEASIBLE
    assert sol.infeasibility > 1e-6


def test_inconsistent_equalities():
    p = QuadraticProgram(np.eye(2), np.zeros(2), [[1.0, 1.0], [2.0, 2.0]], [1.0, 3.0])
    assert solve_qp(p).status is Status.INFEASIBLE


def test_dependent_but_consistent_equalities():
    p = QuadraticProgram(2 * np.eye(2), np.zeros(2), [[1.0, 1.0], [2.0, 2.0]], [1.0, 2.0])
    sol = solve_qp(p)
    assert sol.optimal
    np.testing.assert_allclose(sol.x, [0.5, 0.5], atol=1e-10)


def test_semidefinite_hessian_with_bounds():
    # lasso split of min (g - 1)^2 + 0.5 |g|: g = 0.75
    H = 2 * np.array([[1.0, -1.0], [-1.0, 1.0]])
    f = np.array([-2.0 + 0.5, 2.0 + 0.5])
    sol = solve_qp(QuadraticProgram(H, f, lower_bounds=np.zeros(2)))
    assert sol.optimal
    assert abs(sol.x[0] - sol.x[1] - 0.75) < 1e-7 and min(sol.x) < 1e-9


def test_rejects_asymmetric_hessian_and_bad_shapes():
    with pytest.raises(ValueError):
        QuadraticProgram([[1.0, 2.0], [0.0, 1.0]], np.zeros(2))
    with pytest.raises(ValueError):
        QuadraticProgram(np.eye(2), np.zeros(3))
    with pytest.raises(ValueError):
        QuadraticProgram(np.eye(2), np.zeros(2), [[1.0, 0.0]], [1.0, 2.0])


def test_max_iterations_status():
    p, _ = _random_qp(3)
    sol = solve_qp(p, max_iterations=1)
    assert sol.status in (Status.MAX_ITERATIONS, Status.OPTIMAL)
    if sol.status is Status.MAX_ITERATIONS:
        assert not sol.optimal


# -- solve_kkt_for_active_set ------------------------------------------------------

def test_kkt_empty_active_set():
    H = np.array([[2.0, 0.5], [0.5, 1.0]])
    f = np.array([1.0, 1.0])
    sol = solve_kkt_for_active_set(QuadraticProgram(H, f), WorkingSet())
    np.testing.assert_allclose(sol.x, -np.linalg.solve(H, f), atol=1e-12)


def test_kkt_box_corner():
    A = np.vstack([np.eye(2), -np.eye(2)])
    b = np.array([1.0, 2.0, 0.0, 0.0])
    p = QuadraticProgram(np.eye(2), [-5.0, -5.0], ineq_matrix=A, ineq_rhs=b)
    sol = solve_kkt_for_active_set(p, WorkingSet((0, 1)))
    np.testing.assert_allclose(sol.x, [1.0, 2.0], atol=1e-12)


def test_kkt_dependent_rows_rejected():
    A = np.array([[1.0, 1.0], [2.0, 2.0]])
    p = QuadraticProgram(np.eye(2), np.zeros(2), ineq_matrix=A, ineq_rhs=[1.0, 2.0])
    with pytest.raises(AssumptionViolated, match="Assumption 1"):
        solve_kkt_for_active_set(p, WorkingSet((0, 1)))


@pytest.mark.parametrize("seed", range(4))
def test_kkt_agrees_with_solver_active_set(seed):
    p, _ = _random_qp(seed, bounds=True)
    sol = solve_qp(p)
    again = solve_kkt_for_active_set(p, sol.working_set)
    np.testing.assert_allclose(again.x, sol.x, atol=1e-7)


# -- warm start and structure ---------------------------------------------------------

def test_warm_start_reproduces_cold_solution():
    p, _ = _random_qp(11, bounds=True)
    solver = ActiveSetSolver(p)
    cold = solver.solve()
    rng = np.random.default_rng(0)
    solver.update(linear_cost=p.linear_cost + 0.1 * rng.normal(size=p.n))
    warm = solver.solve(cold.working_set)
    fresh = solve_qp(solver.problem)
    assert warm.optimal and fresh.optimal
    np.testing.assert_allclose(warm.x, fresh.x, atol=1e-7)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_split_structure_matches_generic_path(seed):
    rng = np.random.default_rng(seed)
    ng, m = 12, 3
    Y = rng.normal(size=(6, ng))
    K = 2 * Y.T @ Y + 2e-3 * np.eye(ng)
    A = rng.normal(size=(m, ng))
    G = rng.normal(size=(2, ng))
    c = rng.normal(size=ng)
    g0 = rng.normal(size=ng)
    p = QuadraticProgram(np.block([[K, -K], [-K, K]]), np.concatenate([-c + 0.3, c + 0.3]),
                         np.hstack([A, -A]), A @ g0, np.hstack([G, -G]), G @ g0 + 0.1,
                         np.zeros(2 * ng))
    assert ActiveSetSolver(p)._split is not None
    perm = rng.permutation(2 * ng)
    q = QuadraticProgram(p.hessian[np.ix_(perm, perm)], p.linear_cost[perm],
                         p.eq_matrix[:, perm], p.eq_rhs, p.ineq_matrix[:, perm], p.ineq_rhs,
                         p.lower_bounds[perm])
    assert ActiveSetSolver(q)._split is None
    a, b = solve_qp(p), solve_qp(q)
    assert a.optimal and b.optimal
    ga = a.x[:ng] - a.x[ng:]
    xb = np.empty(2 * ng)
    xb[perm] = b.x
    np.testing.assert_allclose(ga, xb[:ng] - xb[ng:], atol=1e-6)


# -- properties ----------------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.integers(2, 12), m_eq=st.integers(0, 2),
       m_in=st.integers(0, 5), bounds=st.booleans())
def test_optimality_properties(seed, n, m_eq, m_in, bounds):
    m_eq = min(m_eq, n - 1)
    p, x0 = _random_qp(seed, n, m_eq, m_in, bounds)
    sol = solve_qp(p)
    assert sol.optimal
    res = kkt_residuals(p, sol.x, sol.eq_duals, sol.ineq_duals, sol.bound_duals)
    assert res.relative_stationarity <= 1e-8
    assert res.primal_feasibility <= 1e-8
    assert np.all(sol.ineq_duals >= -1e-10)
    # feasible generator point cannot beat the optimum
    assert sol.objective <= p.objective(x0) + 1e-8 * max(1.0, abs(sol.objective))
    # inactive inequalities carry no multiplier
    slack = p.ineq_rhs - p.ineq_matrix @ sol.x
    scale = max(1.0, np.max(np.abs(sol.ineq_duals), initial=0.0))
    assert np.all(np.abs(sol.ineq_duals[slack > 1e-6]) <= 1e-8 * scale)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 100_000), c=st.floats(0.01, 100.0))
def test_objective_scaling_leaves_argmin(seed, c):
    p, _ = _random_qp(seed, 8, 1, 4, True)
    q = QuadraticProgram(c * p.hessian, c * p.linear_cost, p.eq_matrix, p.eq_rhs,
                         p.ineq_matrix, p.ineq_rhs, p.lower_bounds)
    a, b = solve_qp(p), solve_qp(q)
    np.testing.assert_allclose(a.x, b.x, atol=1e-6 * max(1.0, np.max(np.abs(a.x))))
    np.testing.assert_allclose(c * a.ineq_duals, b.ineq_duals,
                               atol=1e-5 * max(1.0, c * np.max(np.abs(a.ineq_duals), initial=0)))
