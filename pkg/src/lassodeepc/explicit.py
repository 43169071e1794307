"""Explicit piecewise-affine form of the Lasso-DeePC selector.

For a fixed sign pattern of the selector and a fixed set of active
inequalities, the optimality conditions are linear in the initial window
``z_ini``. Solving them gives a local affine law ``g = F z_ini + f`` that is
valid on a polyhedral region ``P z_ini <= p``. This module builds that law
from a numerical solution, checks the optimality conditions of a solution,
and explores neighbouring regions on small instances.

Conventions (``W`` and ``c`` from :func:`compute_wf_cf`)::

    W g - c + G~' delta - (mu_plus - mu_minus) / 2 = 0,   mu_plus + mu_minus = 2 lambda_g

where ``G~`` stacks ``Z_P`` over the active inequality rows.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog

from .deepc import (DeePCController, DeePCProblem, InitialWindow, SelectorSolution,
                    constraint_rows, gram_terms)
from .qp import AssumptionViolated
from .signal_data import BlockDataMatrix

ACTIVITY_TOL = 1e-6
DEGENERACY_RTOL = 1e-8
PLUS, ZERO, MINUS = 1, 0, -1


def compute_wf_cf(data: BlockDataMatrix, problem: DeePCProblem) -> Tuple[np.ndarray, np.ndarray]:
    """Hessian ``W_F`` and linear term ``c_F`` of the selector cost.

    ``W_F = 2 Y_F'QY_F + 2 U_F'RU_F + 2 lambda_2 I`` and
    ``c_F = 2 Y_F'Q y_ref + 2 U_F'R u_ref``, so that the tracking cost plus
    ``lambda_2 |g|^2`` equals ``1/2 g'W_F g - c_F'g + const``.

    Raises:
        np.linalg.LinAlgError: "W_F singular" if ``W_F`` is not positive definite.
    """
    W, c, _ = gram_terms(problem, data)
    try:
        np.linalg.cholesky(W)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("W_F singular: increase lambda_2") from None
    return W, c


@dataclass(frozen=True)
class ActiveSetCertificate:
    """Sign pattern and active constraints that identify one affine piece."""

    sign_pattern: np.ndarray
    active_inequalities: Tuple[int, ...]
    G_tilde: np.ndarray
    b_tilde: np.ndarray
    z_ini: np.ndarray
    n_eq: int

    @property
    def nonzero(self) -> np.ndarray:
        return np.flatnonzero(self.sign_pattern != ZERO)

    @property
    def zero(self) -> np.ndarray:
        return np.flatnonzero(self.sign_pattern == ZERO)

    def pattern_key(self) -> tuple:
        return tuple(int(s) for s in self.sign_pattern), tuple(self.active_inequalities)


def _check_rank(G: np.ndarray, rtol: float = DEGENERACY_RTOL) -> None:
    if G.shape[0] == 0:
        return
    if G.shape[0] > G.shape[1]:
        raise AssumptionViolated("Assumption 1 violated: more active rows than selector entries")
    s = np.linalg.svd(G, compute_uv=False)
    if s[-1] < rtol * s[0]:
        raise AssumptionViolated(
            f"Assumption 1 violated: stacked constraint rows are (nearly) dependent "
            f"(sigma_min/sigma_max = {s[-1] / s[0]:.3g})")


def extract_certificate(solution: SelectorSolution,
                        tolerance: float = ACTIVITY_TOL) -> ActiveSetCertificate:
    """Read the sign pattern and active inequalities off a solution.

    Raises:
        AssumptionViolated: if the stacked constraint rows are (nearly) dependent.
    """
    if not solution.optimal:
        raise ValueError("certificate requires an optimal solution")
    g = solution.g
    pattern = np.where(g > tolerance, PLUS, np.where(g < -tolerance, MINUS, ZERO)).astype(int)
    G, gamma = solution.constraint_matrix, solution.constraint_rhs
    active = tuple(int(i) for i in np.flatnonzero(np.abs(G @ g - gamma) <= tolerance))
    G_t = np.vstack([solution.z_p, G[list(active)]])
    b_t = np.concatenate([solution.z_ini, gamma[list(active)]])
    _check_rank(G_t)
    return ActiveSetCertificate(pattern, active, G_t, b_t, np.array(solution.z_ini),
                                solution.z_p.shape[0])


@dataclass(frozen=True)
class ExplicitRegion:
    """Affine law ``g = F z + f`` valid on ``{z : P z <= p}``."""

    F: np.ndarray
    f: np.ndarray
    P: np.ndarray
    p: np.ndarray
    certificate: ActiveSetCertificate
    D: Optional[np.ndarray] = None      # multipliers delta = D z + d
    d: Optional[np.ndarray] = None

    def evaluate(self, z_ini) -> np.ndarray:
        return self.F @ np.asarray(z_ini, dtype=float) + self.f

    def slack(self, z_ini) -> np.ndarray:
        return self.p - self.P @ np.asarray(z_ini, dtype=float)

    def contains(self, z_ini, tol: float = 1e-9) -> bool:
        return bool(np.all(self.slack(z_ini) >= -tol))


def _reduced_kkt(W, c, cert: ActiveSetCertificate, lambda_g: float):
    """Affine maps of ``g_N`` and ``delta`` in ``z_ini`` for a certificate."""
    N = cert.nonzero
    s = cert.sign_pattern[N].astype(float)
    Gt = cert.G_tilde
    m, mz = Gt.shape[0], cert.n_eq
    GN = Gt[:, N]
    K = np.block([[W[np.ix_(N, N)], GN.T], [GN, np.zeros((m, m))]])
    # b~ = E z + e0: z_ini feeds the first n_eq rows only
    E = np.zeros((m, mz))
    E[:mz] = np.eye(mz)
    e0 = np.concatenate([np.zeros(mz), cert.b_tilde[mz:]])
    rhs_z = np.vstack([np.zeros((N.size, mz)), E])
    rhs_0 = np.concatenate([c[N] - lambda_g * s, e0])
    try:
        lu = sla.lu_factor(K, check_finite=True)
        sv = np.linalg.svd(K, compute_uv=False)
        if sv[-1] <= 1e-13 * sv[0]:
            raise np.linalg.LinAlgError
    except (np.linalg.LinAlgError, ValueError):
        raise np.linalg.LinAlgError("reduced system singular") from None
    Mz = sla.lu_solve(lu, rhs_z)
    m0 = sla.lu_solve(lu, rhs_0)
    return N, Mz[:N.size], m0[:N.size], Mz[N.size:], m0[N.size:]


def local_affine_law(certificate: ActiveSetCertificate, data: BlockDataMatrix,
                     problem: DeePCProblem) -> ExplicitRegion:
    """Local affine selector law and its region for one certificate.

    The region collects (i) the inactive inequalities, (ii) sign consistency
    of the nonzero components, (iii) ``|c_mu_k(z)| <= 2 lambda_g`` on the zero
    set and (iv) nonnegative multipliers of the active inequalities.
    """
    W, c = compute_wf_cf(data, problem)
    lam = problem.lambda_g
    cert = certificate
    N, FN, fN, Dz, d0 = _reduced_kkt(W, c, cert, lam)
    n_g, mz = data.n_g, cert.n_eq
    F = np.zeros((n_g, mz))
    f = np.zeros(n_g)
    F[N], f[N] = FN, fN
    rows, rhs = [], []
    G, gamma = constraint_rows(problem, data)
    inactive = np.setdiff1d(np.arange(G.shape[0]), cert.active_inequalities)
    if inactive.size:                                          # (i)
        rows.append(G[inactive] @ F)
        rhs.append(gamma[inactive] - G[inactive] @ f)
    if N.size:                                                 # (ii)
        s = cert.sign_pattern[N].astype(float)[:, None]
        rows.append(-s * FN)
        rhs.append(s[:, 0] * fN)
    Z0 = cert.zero
    if Z0.size:                                                # (iii)
        # c_mu = 2 (W g - c + G~' delta) on the zero set
        Gt = cert.G_tilde
        Cz = 2.0 * (W[np.ix_(Z0, N)] @ FN + Gt[:, Z0].T @ Dz)
        c0 = 2.0 * (W[np.ix_(Z0, N)] @ fN - c[Z0] + Gt[:, Z0].T @ d0)
        rows += [Cz, -Cz]
        rhs += [2 * lam - c0, 2 * lam + c0]
    n_act = len(cert.active_inequalities)
    if n_act:                                                  # (iv)
        rows.append(-Dz[mz:])
        rhs.append(d0[mz:])
    P = np.vstack(rows) if rows else np.zeros((0, mz))
    p = np.concatenate(rhs) if rhs else np.zeros(0)
    return ExplicitRegion(F, f, P, p, cert, Dz, d0)


def zero_set_multipliers(region: ExplicitRegion, data: BlockDataMatrix,
                         problem: DeePCProblem, z_ini) -> np.ndarray:
    """``c_mu_k(z_ini)`` for the zero components of the region's pattern."""
    W, c = compute_wf_cf(data, problem)
    g = region.evaluate(z_ini)
    delta = region.D @ z_ini + region.d
    Z0 = region.certificate.zero
    return 2.0 * (W[Z0] @ g - c[Z0] + region.certificate.G_tilde[:, Z0].T @ delta)


def closed_form_selector(certificate: ActiveSetCertificate, data: BlockDataMatrix,
                         problem: DeePCProblem, z_ini=None) -> np.ndarray:
    """Dense closed form of the selector for an all-nonzero sign pattern.

    ``g = -lambda_g W^-1 (G~' M^-1 G~ W^-1 - I) e + c_e`` with
    ``M = G~ W^-1 G~'``, ``e_k = -1`` (positive) / ``+1`` (negative) and
    ``c_e = W^-1 (c - G~' M^-1 (G~ W^-1 c - b~))``.
    """
    cert = certificate
    if np.any(cert.sign_pattern == ZERO):
        raise ValueError("closed form requires every selector component to be nonzero")
    W, c = compute_wf_cf(data, problem)
    Gt = cert.G_tilde
    b = cert.b_tilde.copy()
    if z_ini is not None:
        b[:cert.n_eq] = np.asarray(z_ini, dtype=float)
    e = -cert.sign_pattern.astype(float)
    cw = sla.cho_factor(W)
    Wi = lambda v: sla.cho_solve(cw, v)
    WiGt = Wi(Gt.T)
    M = Gt @ WiGt
    Mi = lambda v: np.linalg.solve(M, v)
    We = Wi(e)
    term = WiGt @ Mi(Gt @ We) - We
    c_e = Wi(c) - WiGt @ Mi(Gt @ Wi(c) - b)
    return -problem.lambda_g * term + c_e


# -- KKT verification ----------------------------------------------------------

@dataclass(frozen=True)
class KKTReport:
    """Max-norm residual of each block of the optimality conditions."""

    stationarity: float
    primal_feasibility: float
    sign: float
    complementarity: float
    zero_set: float

    def max(self) -> float:
        return max(self.stationarity, self.primal_feasibility, self.sign,
                   self.complementarity, self.zero_set)

    def ok(self, tol: float = 1e-7) -> bool:
        return self.max() <= tol


def verify_kkt(solution: SelectorSolution, data: BlockDataMatrix, problem: DeePCProblem,
               zero_tol: float = 0.0) -> KKTReport:
    """Residuals of the split-selector optimality conditions.

    ``problem`` must carry the references the solution was computed with.
    Components with ``|g_plus|, |g_minus| <= zero_tol`` form the zero set on
    which ``|c_mu_k| <= 2 lambda_g`` is checked.
    """
    K, c, _ = gram_terms(problem, data)
    G, gamma = constraint_rows(problem, data)
    lam = problem.lambda_g
    gp, gm = solution.g_plus, solution.g_minus
    g = gp - gm
    beta = solution.beta
    mu = solution.mu if solution.mu.size == G.shape[0] else np.zeros(G.shape[0])
    core = K @ g - c + data.z_p.T @ beta + G.T @ mu
    r_a = core + lam - solution.mu_plus
    r_b = -core + lam - solution.mu_minus
    stat = max(np.max(np.abs(r_a), initial=0.0), np.max(np.abs(r_b), initial=0.0))
    viol = G @ g - gamma
    primal = max(np.max(np.abs(data.z_p @ g - solution.z_ini), initial=0.0),
                 np.max(viol, initial=0.0))
    sign = max(0.0, *(np.max(-v, initial=0.0) for v in
                      (gp, gm, solution.mu_plus, solution.mu_minus, mu)))
    comp = max(np.max(np.abs(solution.mu_plus * gp), initial=0.0),
               np.max(np.abs(solution.mu_minus * gm), initial=0.0),
               np.max(np.abs(mu * viol), initial=0.0))
    zero = (np.abs(gp) <= zero_tol) & (np.abs(gm) <= zero_tol)
    c_mu = 2.0 * core[zero]
    zs = float(np.max(np.abs(c_mu) - 2 * lam, initial=0.0))
    return KKTReport(float(stat), float(primal), float(sign), float(comp), max(zs, 0.0))


# -- grouped laws ----------------------------------------------------------------

@dataclass(frozen=True)
class GroupedLaw:
    """Per-group slices ``g^j = F^j z + f^j`` sharing one region."""

    region: ExplicitRegion
    blocks: Dict[int, Tuple[np.ndarray, np.ndarray]]

    def gain_magnitudes(self) -> Dict[int, float]:
        return {j: float(np.max(np.abs(F), initial=0.0)) for j, (F, _) in self.blocks.items()}

    def dense_groups(self, threshold: float = 1e-12) -> Dict[int, bool]:
        """Whether each group's gain block has an entry above ``threshold``."""
        return {j: m > threshold for j, m in self.gain_magnitudes().items()}


def grouped_affine_law(certificate: ActiveSetCertificate, data: BlockDataMatrix,
                       problem: DeePCProblem) -> GroupedLaw:
    region = local_affine_law(certificate, data, problem)
    blocks = {}
    for j in data.groups:
        rows = data.column_groups == j
        blocks[j] = (region.F[rows], region.f[rows])
    return GroupedLaw(region, blocks)


# -- region geometry and exploration ------------------------------------------

def chebyshev_point(P: np.ndarray, p: np.ndarray, center: np.ndarray, radius: float,
                    equality: Optional[int] = None) -> Tuple[np.ndarray, float]:
    """Most interior point of ``{P z <= p, |z - center|_inf <= radius}``.

    With ``equality`` set, that row is imposed with equality (a facet point).
    Returns the point and its inscribed-ball radius (negative if empty).
    """
    m, nz = P.shape
    norms = np.linalg.norm(P, axis=1)
    keep = np.ones(m, dtype=bool)
    if equality is not None:
        keep[equality] = False
    A = np.hstack([P[keep], norms[keep, None]])
    box = np.vstack([np.hstack([np.eye(nz), np.ones((nz, 1))]),
                     np.hstack([-np.eye(nz), np.ones((nz, 1))])])
    A_ub = np.vstack([A, box])
    b_ub = np.concatenate([p[keep], center + radius, -(center - radius)])
    A_eq = b_eq = None
    if equality is not None:
        A_eq = np.hstack([P[equality], [0.0]])[None]
        b_eq = [p[equality]]
    cost = np.zeros(nz + 1)
    cost[-1] = -1.0
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=[(None, None)] * nz + [(None, radius)], method="highs")
    if res.status != 0:
        return center.copy(), -np.inf
    return res.x[:nz], float(res.x[-1])


def sample_region(region: ExplicitRegion, n: int, rng: np.random.Generator,
                  center=None, radius: float = 1.0, margin: float = 1e-7) -> np.ndarray:
    """Hit-and-run samples strictly inside the region (intersected with a box)."""
    c = region.certificate.z_ini if center is None else np.asarray(center, dtype=float)
    z, r = chebyshev_point(region.P, region.p, c, radius)
    if r <= margin:
        raise ValueError("region has empty interior within the sampling box")
    P = np.vstack([region.P, np.eye(c.size), -np.eye(c.size)])
    p = np.concatenate([region.p, c + radius, -(c - radius)]) - margin
    out = np.empty((n, c.size))
    for i in range(n):
        d = rng.normal(size=c.size)
        d /= np.linalg.norm(d)
        Pd = P @ d
        s = p - P @ z
        with np.errstate(divide="ignore"):
            t = s / Pd
        hi = np.min(t[Pd > 0], initial=np.inf)
        lo = np.max(t[Pd < 0], initial=-np.inf)
        z = z + rng.uniform(lo, hi) * d
        out[i] = z
    return out


def enumerate_regions(data: BlockDataMatrix, problem: DeePCProblem, z_seed,
                      radius: float = 1.0, max_regions: int = 200,
                      step: float = 1e-6) -> List[ExplicitRegion]:
    """Explore the affine pieces around ``z_seed`` by crossing region facets.

    Only for small instances (at most 12 selector entries and 6 inequality
    rows). Exploration stays within ``|z - z_seed|_inf <= radius``.
    """
    G, _ = constraint_rows(problem, data)
    if data.n_g > 12 or G.shape[0] > 6:
        raise ValueError("region enumeration is limited to n_g <= 12 and <= 6 inequality rows")
    z_seed = np.asarray(z_seed, dtype=float)
    ctrl = DeePCController(problem, data)
    seen, regions = set(), []
    queue = [z_seed]
    while queue and len(regions) < max_regions:
        z = queue.pop(0)
        sol = ctrl.solve(InitialWindow(z))
        if not sol.optimal:
            continue
        try:
            region = local_affine_law(extract_certificate(sol), data, problem)
        except (AssumptionViolated, np.linalg.LinAlgError):
            continue
        key = region.certificate.pattern_key()
        if key in seen:
            continue
        seen.add(key)
        regions.append(region)
        for row in range(region.P.shape[0]):
            zf, r = chebyshev_point(region.P, region.p, z_seed, radius, equality=row)
            if r <= 10 * step:
                continue
            normal = region.P[row] / np.linalg.norm(region.P[row])
            queue.append(zf + step * normal)
    return regions


# -- region dumps ----------------------------------------------------------------

def write_region(region: ExplicitRegion, path) -> Tuple[Path, Path]:
    """Write ``F, f, P, p`` as long-format CSV plus a JSON sidecar.

    CSV columns: ``block,i,j,value`` (``j`` is 0 for vectors).
    """
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["block", "i", "j", "value"])
        for name, arr in (("F", region.F), ("f", region.f), ("P", region.P), ("p", region.p)):
            arr2 = arr if arr.ndim == 2 else arr[:, None]
            for i in range(arr2.shape[0]):
                for j in range(arr2.shape[1]):
                    w.writerow([name, i, j, repr(float(arr2[i, j]))])
    cert = region.certificate
    side = path.with_suffix(".json")
    side.write_text(json.dumps({
        "sign_pattern": [int(s) for s in cert.sign_pattern],
        "active_inequalities": list(cert.active_inequalities),
        "n_g": int(region.F.shape[0]),
        "z_dim": int(region.F.shape[1]),
        "region_rows": int(region.P.shape[0]),
        "z_ini": [float(v) for v in cert.z_ini],
    }, indent=2))
    return path, side


def read_region_arrays(path) -> Dict[str, np.ndarray]:
    """Read the ``F, f, P, p`` arrays of a region dump."""
    entries: Dict[str, dict] = {"F": {}, "f": {}, "P": {}, "p": {}}
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        if next(r) != ["block", "i", "j", "value"]:
            raise ValueError("unexpected region header")
        for name, i, j, v in r:
            entries[name][(int(i), int(j))] = float(v)
    side = json.loads(Path(path).with_suffix(".json").read_text())
    n_g, nz, m = side["n_g"], side["z_dim"], side["region_rows"]
    out = {"F": np.zeros((n_g, nz)), "f": np.zeros(n_g), "P": np.zeros((m, nz)), "p": np.zeros(m)}
    for name, vals in entries.items():
        for (i, j), v in vals.items():
            if out[name].ndim == 2:
                out[name][i, j] = v
            else:
                out[name][i] = v
    return out
