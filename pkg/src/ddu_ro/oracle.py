"""Brute-force ground truth for desk-scale instances.

Three independent enumeration oracles used to validate every solver module:

* pure_integer — no continuous uncertainty: enumerate first-stage points and
  discrete scenarios, solving one recourse MIP per leaf (cached by RHS);
* lp_recourse_vertex — LP recourse: the recourse value is convex in u, so
  the worst case over each fixed-u_d slice is attained at a vertex of the
  slice polytope; vertices are enumerated by active-set combinations.
  No vertex argument applies to MIP recourse (a min of convex functions is
  not convex), hence:
* interval_u — one continuous uncertainty dimension with MIP recourse: the
  inner worst-case value is piecewise linear in the scalar u, so its maximum
  over the interval U(x) is attained at an endpoint or at a crossing of the
  finitely many dual-vertex value/slack lines, all of which are enumerated.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, product
from typing import Optional

import numpy as np

from .milp import Model, dot
from .model import ProblemInstance, Scenario
from .reformulate import solve_recourse

INF = float("inf")


@dataclass
class OracleResult:
    w_star: float            # +inf means infeasible
    x_star: Optional[np.ndarray]
    n_leaves: int = 0

    @property
    def feasible(self) -> bool:
        return np.isfinite(self.w_star)


def enumerate_X(instance: ProblemInstance, budget: int = 100_000):
    """All feasible first-stage points (purely integer X required)."""
    fs = instance.first_stage
    if fs.n_x:
        raise ValueError("oracle enumeration requires a pure-integer X")
    ranges = [range(int(np.ceil(lo)), int(np.floor(hi)) + 1)
              for lo, hi in fs.integer_bounds]
    total = int(np.prod([len(r) for r in ranges], dtype=float))
    if total > budget:
        raise ValueError(f"first-stage box too large ({total})")
    for pt in product(*ranges):
        x = np.array(pt, dtype=float)
        if fs.A.shape[0] == 0 or (fs.A @ x >= fs.b - 1e-9).all():
            yield x


def oracle_exact_pure_integer(instance: ProblemInstance,
                              budget: int = 100_000) -> OracleResult:
    """Exact w* for instances with no continuous uncertainty (n_u = 0)."""
    ddu = instance.ddu
    if ddu.n_u:
        raise ValueError("pure-integer oracle requires n_u = 0")
    scenarios = [u_d for u_d in ddu.enumerate_u_d(budget)]
    xs = list(enumerate_X(instance, budget))
    if len(xs) * max(len(scenarios), 1) > budget:
        raise ValueError("enumeration budget exceeded")
    cache: dict = {}
    leaves = 0
    best, best_x = INF, None
    for x in xs:
        rhs_box = ddu.h + ddu.G @ x
        fd = ddu.F_d(x)
        eta = -INF
        any_scenario = False
        for u_d in scenarios:
            if ddu.m_u and not ((fd @ u_d) <= rhs_box + 1e-9).all():
                continue
            any_scenario = True
            key = tuple(np.round(instance.recourse.rhs(x, np.zeros(0), u_d),
                                 9))
            if key not in cache:
                sol = solve_recourse(instance, x, Scenario(np.zeros(0), u_d))
                cache[key] = INF if sol.status != "optimal" else sol.value
                leaves += 1
            eta = max(eta, cache[key])
            if eta == INF:
                break
        if not any_scenario:
            # U(x) empty: x violates the nonempty-uncertainty assumption and
            # is excluded, matching the solvers' abort-on-empty behaviour
            continue
        if eta < INF and instance.c1 @ x + eta < best:
            best = instance.c1 @ x + eta
            best_x = x
    return OracleResult(best, best_x, leaves)


def _slice_vertices(F: np.ndarray, rhs: np.ndarray, tol: float = 1e-9):
    """Vertices of {u >= 0, F u <= rhs} by active-set enumeration."""
    mu, n = F.shape
    if n == 0:
        return [np.zeros(0)] if (rhs >= -tol).all() else []
    rows = np.vstack([F, -np.eye(n)])
    b = np.concatenate([rhs, np.zeros(n)])
    seen = set()
    out = []
    for combo in combinations(range(mu + n), n):
        sub = rows[list(combo)]
        if abs(np.linalg.det(sub)) < 1e-10:
            continue
        v = np.linalg.solve(sub, b[list(combo)])
        if (rows @ v <= b + 1e-7).all():
            key = tuple(np.round(v, 7))
            if key not in seen:
                seen.add(key)
                out.append(v)
    return out


def _slice_state(instance, x, u_d):
    """(nonempty, bounded) flags for the slice {u_c : F_c u_c <= rhs}."""
    ddu = instance.ddu
    rhs = ddu.h + ddu.G @ x - ddu.F_d(x) @ u_d
    m = Model("slice", sense="max")
    uc = m.add_vars("uc", ddu.n_u)
    for i in range(ddu.mu_u):
        m.add_constr(f"r[{i}]", dot(ddu.F_c[i], uc), "<=", rhs[i])
    m.set_objective(dot(np.ones(ddu.n_u), uc))
    out = m.solve()
    return out.status != "infeasible", out.status != "unbounded", rhs


def oracle_lp_recourse_vertex(instance: ProblemInstance,
                              budget: int = 100_000) -> OracleResult:
    """Exact w* for LP-recourse instances via slice-vertex enumeration."""
    ddu, rc = instance.ddu, instance.recourse
    if rc.m_y:
        raise ValueError("vertex oracle requires an LP recourse (m_y = 0)")
    if ddu.n_u > 4 or ddu.mu_u > 8:
        raise ValueError("slice dimensions too large for vertex enumeration")
    scenarios = [u_d for u_d in ddu.enumerate_u_d(budget)]
    best, best_x = INF, None
    leaves = 0
    for x in enumerate_X(instance, budget):
        eta = -INF
        any_scenario = False
        dead = False
        for u_d in scenarios:
            nonempty, bounded, rhs = _slice_state(instance, x, u_d)
            if not nonempty:
                continue
            if not bounded:
                raise ValueError("unbounded uncertainty slice")
            any_scenario = True
            for v in _slice_vertices(ddu.F_c, rhs):
                sol = solve_recourse(instance, x, Scenario(v, u_d))
                leaves += 1
                if sol.status != "optimal":
                    dead = True   # worst case +inf: x not robustly feasible
                    break
                eta = max(eta, sol.value)
            if dead:
                break
        if dead or not any_scenario:
            continue
        if instance.c1 @ x + eta < best:
            best = instance.c1 @ x + eta
            best_x = x
    return OracleResult(best, best_x, leaves)


def _interval_of_U(F_col, rhs, tol: float = 1e-9):
    """{u >= 0 : F_col u <= rhs} as [lo, hi]; None when empty."""
    lo, hi = 0.0, INF
    for f, r in zip(F_col, rhs):
        if f > tol:
            hi = min(hi, r / f)
        elif f < -tol:
            lo = max(lo, r / f)
        elif r < -tol:
            return None
    if hi == INF:
        raise ValueError("unbounded uncertainty interval")
    if lo > hi + 1e-9:
        return None
    return lo, hi


def _dual_vertex_lines(instance, x, u_d, y_d):
    """(intercept, slope) lines in u for the recourse value and the
    feasibility measure at fixed (x, u_d, y_d), from dual-polytope vertices."""
    rc = instance.recourse
    r0 = rc.d - rc.B1 @ x - rc.B2d @ y_d
    if rc.E_d.shape[1]:
        r0 = r0 - rc.E_d @ u_d
    e = rc.E_c[:, 0]
    cost0 = float(rc.c2d @ y_d)
    # value duals: vertices of {pi >= 0, B2c' pi <= c2c}
    vts = _slice_vertices(rc.B2c.T, rc.c2c)
    val = [(cost0 + float(p @ r0), -float(p @ e)) for p in vts]
    # infeasibility certificates: vertices of the normalized dual cone
    rays = _slice_vertices(np.vstack([rc.B2c.T, np.ones((1, rc.mu_y))]),
                           np.concatenate([np.zeros(rc.n_y), [1.0]]))
    slk = [(float(g @ r0), -float(g @ e)) for g in rays
           if np.abs(g).max(initial=0.0) > 1e-9]
    return val, slk


def _envelope(lines, u: float, empty: float) -> float:
    return max((a + b * u for a, b in lines), default=empty)


def oracle_interval_u(instance: ProblemInstance,
                      budget: int = 100_000,
                      tol: float = 1e-7) -> OracleResult:
    """Exact w* for one continuous uncertainty dimension with MIP recourse.

    Per first stage x and discrete scenario part u_d, the inner value max
    over u in the slice U(x | u_d) of the recourse MIP value is a max of
    min-of-convex piecewise-linear functions of the scalar u; every
    breakpoint lies at an interval endpoint, a crossing of two dual-vertex
    lines, or a root of a slack line, so evaluating the dual-side value at
    that finite candidate set is exact.  The recourse MIP is feasible at u
    iff the slack envelope (normalized-cone value) is <= 0 for some y_d;
    x is excluded when some scenario is uncoverable.
    """
    ddu, rc = instance.ddu, instance.recourse
    if ddu.n_u != 1:
        raise ValueError("interval oracle requires exactly one continuous "
                         "uncertainty dimension")
    y_ds = list(rc.enumerate_y_d(budget))
    u_ds = list(ddu.enumerate_u_d(budget))
    best, best_x = INF, None
    leaves = 0
    for x in enumerate_X(instance, budget):
        base_rhs = ddu.h + ddu.G @ x
        fd = ddu.F_d(x)
        eta, dead = -INF, False
        any_slice = False
        for u_d in u_ds:
            rhs = base_rhs - fd @ u_d if ddu.m_u else base_rhs
            span = _interval_of_U(ddu.F_c[:, 0], rhs)
            if span is None:
                continue               # empty slice: no scenarios here
            any_slice = True
            lo, hi = span
            lines = [_dual_vertex_lines(instance, x, u_d, y_d)
                     for y_d in y_ds]
            flat = [ln for val, slk in lines for ln in val + slk]
            cands = {lo, hi}
            for i, (a1, b1) in enumerate(flat):
                if b1:                 # root of the line (feasibility flip)
                    cands.add(-a1 / b1)
                for a2, b2 in flat[i + 1:]:
                    if abs(b1 - b2) > 1e-12:
                        cands.add((a2 - a1) / (b1 - b2))
            # one-sided limits around candidates guard against value jumps
            # at feasibility-region boundaries (the value is only l.s.c.)
            cands = sorted({min(max(c + off, lo), hi) for c in cands
                            if np.isfinite(c)
                            for off in (-1e-9, 0.0, 1e-9)})
            for u in cands:
                leaves += 1
                phi = INF
                for val, slk in lines:
                    if _envelope(slk, u, 0.0) > tol:
                        continue       # this y_d cannot cover u
                    phi = min(phi, _envelope(val, u, 0.0))
                if phi == INF:
                    dead = True        # no y_d covers u: x not robust
                    break
                eta = max(eta, phi)
            if dead:
                break
        if dead or not any_slice:
            continue
        if instance.c1 @ x + eta < best:
            best = instance.c1 @ x + eta
            best_x = x
    return OracleResult(best, best_x, leaves)
