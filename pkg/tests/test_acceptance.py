"""Acceptance criteria 1-9.

Each test prints one ``CRITERION n: PASS|FAIL`` line (visible in ``pytest -v``
output) and then asserts the criterion at its stated tolerance. Criteria 5-7
run the full unbalanced-disk benchmark and take tens of minutes on one core.
"""

import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from instances import lti_prediction_case, lti_trajectory, mosaic_pair, random_case
from lassodeepc.closed_loop import (DEFAULT_LAMBDA_GRID, DEFAULT_SWITCH, DataStructure,
                                    PlantDivergence, ReferenceProfile, benchmark_data,
                                    run_closed_loop)
from lassodeepc.deepc import DeePCController, DeePCProblem, constraint_rows, solve_step
from lassodeepc.explicit import (ZERO, closed_form_selector, extract_certificate,
                                 local_affine_law, sample_region, verify_kkt)
from lassodeepc.plant import LTI_ORDER, DiskParams, lti_oracle_response
from lassodeepc.signal_data import check_pe

TESTS = Path(__file__).resolve().parent
BENCH_LAMBDA = 10.0
CASES = {1: 1.57, 2: 2.97}          # OP-2 angle of the switching reference
STEADY_AFTER_SWITCH = 100           # steps after the switch counted as steady OP-2 tracking


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail
    return emit


def _benchmark_problem(lambda_g=BENCH_LAMBDA):
    return DeePCProblem(40, 30, 100.0, 1.0, lambda_g, 1e-6, u_min=-10, u_max=10)


# -- criteria 1-3: small oracle instances ------------------------------------------------

@pytest.fixture(scope="module")
def lti_runs():
    start = time.perf_counter()
    runs = []
    for seed in range(20):
        problem, data, z_ini, state = lti_prediction_case(seed)
        order = problem.rho + problem.horizon + LTI_ORDER
        pe = check_pe(lti_trajectory(120, 1000 + seed).u, order)[1]
        sol = solve_step(problem, data, z_ini)
        y_true, _ = lti_oracle_response(state, sol.u_f)
        runs.append((problem, data, sol, pe, float(np.max(np.abs(sol.y_f - y_true)))))
    return runs, time.perf_counter() - start


def _region_case(seed):
    """Alternating sparse and dense-pattern instances with 2 * horizon = 4 input rows."""
    if seed % 2:
        return random_case(seed, n_g=20, lambda_g=0.3)
    return random_case(seed, n_g=12, lambda_g=1e-3, lambda_2=1.0, u_bound=100.0)


@pytest.fixture(scope="module")
def region_runs():
    start = time.perf_counter()
    records = []
    for seed in range(25):
        problem, data, z = _region_case(seed)
        ctrl = DeePCController(problem, data)
        sol = ctrl.solve(z)
        rec = {"seed": seed, "n_g": data.n_g, "rows": constraint_rows(problem, data)[0].shape[0],
               "solves": [sol], "law_err": np.inf, "dense": False, "cf_err": None,
               "samples": 0}
        records.append(rec)
        if not sol.optimal:
            continue
        cert = extract_certificate(sol)
        region = local_affine_law(cert, data, problem)
        try:
            samples = sample_region(region, 100, np.random.default_rng(seed), radius=1.0)
        except ValueError:
            continue
        rec["samples"] = len(samples)
        errs = []
        for zz in samples:
            s = ctrl.solve(zz)
            rec["solves"].append(s)
            errs.append(np.max(np.abs(region.evaluate(zz) - s.g)) if s.optimal else np.inf)
        rec["law_err"] = float(max(errs))
        if np.all(cert.sign_pattern != ZERO):
            rec["dense"] = True
            pts = np.vstack([z[None, :], samples])
            rec["cf_err"] = float(max(np.max(np.abs(closed_form_selector(cert, data, problem, zz)
                                                    - region.evaluate(zz))) for zz in pts))
        rec["problem"], rec["data"] = problem, data
    return records, time.perf_counter() - start


def test_criterion_1_lti_prediction(lti_runs, report):
    runs, elapsed = lti_runs
    worst = max(r[4] for r in runs)
    ok = (all(r[2].optimal and r[3] for r in runs) and worst <= 1e-6 and elapsed < 10.0)
    report(1, ok, f"20 pairs, max |y_f - y_ss| = {worst:.2e} (<= 1e-6), all PE, "
                  f"{elapsed:.1f} s (< 10 s)")


def test_criterion_2_explicit_equivalence(region_runs, report):
    records, elapsed = region_runs
    worst = max(r["law_err"] for r in records)
    dense = [r for r in records if r["dense"]]
    cf = max((r["cf_err"] for r in dense), default=np.inf)
    ok = (all(r["n_g"] <= 30 and r["rows"] <= 4 and r["samples"] == 100 for r in records)
          and worst <= 1e-5 and len(dense) > 0 and cf <= 1e-8 and elapsed < 60.0)
    report(2, ok, f"25 instances x 100 samples, law vs solver {worst:.2e} (<= 1e-5); "
                  f"closed form on {len(dense)} dense certificates {cf:.2e} (<= 1e-8); "
                  f"{elapsed:.1f} s (< 60 s)")


def test_criterion_3_kkt_residuals(lti_runs, region_runs, report):
    reports = [verify_kkt(sol, data, problem) for problem, data, sol, _, _ in lti_runs[0]
               if sol.optimal]
    for rec in region_runs[0]:
        if "problem" in rec:
            reports += [verify_kkt(s, rec["data"], rec["problem"]) for s in rec["solves"]
                        if s.optimal]
    worst = max(r.max() for r in reports)
    zero_set = max(r.zero_set for r in reports)
    ok = worst <= 1e-7 and zero_set <= 1e-8
    report(3, ok, f"{len(reports)} optimal solves, max residual {worst:.2e} (<= 1e-7), "
                  f"zero-set excess over 2 lambda_g {zero_set:.2e} (<= 1e-8)")


# -- criterion 4 ----------------------------------------------------------------------------

def test_criterion_4_shrinkage(report):
    grid = 10.0 ** np.arange(-3, 4)
    worst = -np.inf
    all_optimal = True
    for seed in range(10):
        problem, data, z = random_case(seed)
        norms = []
        for lam in grid:
            sol = solve_step(replace(problem, lambda_g=float(lam)), data, z)
            all_optimal &= sol.optimal
            norms.append(sol.norm1)
        worst = max(worst, float(np.max(np.diff(norms))))
    ok = all_optimal and worst <= 1e-8
    report(4, ok, f"10 instances, largest increase of |g|_1 along the grid {worst:.2e} (<= 1e-8)")


# -- criterion 8 ----------------------------------------------------------------------------

def test_criterion_8_mosaic_neutrality(report):
    worst = 0.0
    for seed in range(10):
        mos, plain, traj = mosaic_pair(seed)
        p = DeePCProblem(3, 3, lambda_g=0.05, u_min=-2, u_max=2, y_ref=np.ones(3))
        z = np.concatenate([traj.u[10:13, 0], traj.y[10:13, 0]])
        a, b = solve_step(p, mos, z), solve_step(p, plain, z)
        worst = max(worst, float(np.max(np.abs(a.g - b.g))))
    report(8, worst <= 1e-10, f"10 instances, max |g_mosaic - g_plain| = {worst:.2e} (<= 1e-10)")


# -- criterion 9 ----------------------------------------------------------------------------

def test_criterion_9_builder_suite(report):
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           str(TESTS / "test_signal_data.py"), str(TESTS / "test_plant.py")],
                          capture_output=True, text=True, cwd=TESTS.parent)
    failed = [ln.split(" ")[1] for ln in proc.stdout.splitlines() if ln.startswith("FAILED ")]
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr
    detail = f"signal_data + plant builder suite: {summary}"
    if failed:
        detail += f"; failing: {', '.join(failed)}"
    report(9, proc.returncode == 0, detail)


# -- criterion 5: single-OP infeasibility ----------------------------------------------------

def test_criterion_5_single_op_infeasibility(report):
    _, _, data = benchmark_data(DataStructure.SINGLE_OP, (0.17,))
    reference = ReferenceProfile.switching(0.17, CASES[1])
    seen = []
    # The benchmark weight first: a single feasible run settles the verdict.
    order = [BENCH_LAMBDA] + [lam for lam in DEFAULT_LAMBDA_GRID if lam != BENCH_LAMBDA]
    for lam in order:
        try:
            res = run_closed_loop(DiskParams(), data, _benchmark_problem(lam), reference,
                                  reference.length, stop_on_infeasible=True)
        except PlantDivergence as exc:
            res = exc.result
        seen.append((lam, res.infeasible_steps, res.T_sim))
        if res.infeasible_steps == 0:
            break   # one feasible run decides the criterion
    ok = len(seen) == len(DEFAULT_LAMBDA_GRID) and all(n > 0 for _, n, _ in seen)
    detail = ", ".join(f"lambda_g={lam:g}: {n} infeasible in {T} steps" for lam, n, T in seen)
    report(5, ok, f"{detail} (need >= 1 for all 11 values)")


# -- criteria 6 and 7: benchmark ordering and explainability -----------------------------------

@pytest.fixture(scope="module")
def benchmark_runs():
    start = time.perf_counter()
    runs = {}
    for structure in (DataStructure.BLOCK_HANKEL, DataStructure.TWO_OP_HANKEL):
        for case, op2 in CASES.items():
            _, _, data = benchmark_data(structure, (0.17, op2))
            reference = ReferenceProfile.switching(0.17, op2)
            try:
                res = run_closed_loop(DiskParams(), data, _benchmark_problem(), reference,
                                      reference.length)
                rmse_y = res.rmse_y
            except PlantDivergence as exc:   # a diverging run tracks arbitrarily badly
                res, rmse_y = exc.result, np.inf
            runs[structure, case] = (res, rmse_y)
    return runs, time.perf_counter() - start


def test_criterion_6_table_ordering(benchmark_runs, report):
    runs, elapsed = benchmark_runs
    block = {c: runs[DataStructure.BLOCK_HANKEL, c][1] for c in CASES}
    two = {c: runs[DataStructure.TWO_OP_HANKEL, c][1] for c in CASES}
    checks = {
        "block < two-OPs (Case 1)": block[1] < two[1],
        "block < two-OPs (Case 2)": block[2] < two[2],
        "block Case 1 < 0.5 rad": block[1] < 0.5,
        "two-OPs Case 1 > 1 rad": two[1] > 1.0,
        "runtime < 600 s": elapsed < 600.0,
    }
    failed = [name for name, ok in checks.items() if not ok]
    report(6, not failed,
           f"RMSE_y block {block[1]:.3f}/{block[2]:.3f}, two-OPs {two[1]:.3f}/{two[2]:.3f} "
           f"(Case 1/Case 2), {elapsed:.0f} s; failed: {', '.join(failed) or 'none'}")


def test_criterion_7_unexplainability(benchmark_runs, report):
    res, rmse_y = benchmark_runs[0][DataStructure.BLOCK_HANKEL, 1]
    successful = rmse_y < 0.5 and res.all_optimal
    start = DEFAULT_SWITCH + STEADY_AFTER_SWITCH
    index = res.expl_index[start:]
    index = index[np.isfinite(index)]
    frac = float(np.mean(index < 0.99)) if index.size else 0.0
    ok = successful and frac >= 0.9
    report(7, ok, f"block-Hankel Case 1 ({'successful' if successful else 'unsuccessful'} run): "
                  f"OP-2 index < 0.99 at {100 * frac:.1f}% of {index.size} steady OP-2 steps "
                  f"(need >= 90%), mean index {np.mean(index):.4f}")
