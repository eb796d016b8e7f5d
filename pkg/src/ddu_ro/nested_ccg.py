"""Nested cutting-plane algorithm for polytope uncertainty and MIP recourse.

The outer loop alternates between a master MILP over the first stage and two
inner column-and-constraint subroutines at the incumbent x*:

* feasibility (run_isf) — grows a set of discrete recourse vectors until
  either every scenario in U(x*) is coverable (eta_f = 0) or an uncoverable
  scenario is certified; a Phase-II correction loop (icp_f) then repairs the
  (y_d, pi) pair family until it exactly captures the worst-case scenarios;
* optimality (run_iso) — a standard inner max-min loop bounding the true
  worst-case recourse cost from both sides, followed by the analogous
  correction loop (icp_o).

Each closed pair family becomes one cutting set of the outer master: a
pair-family uncertainty block plus replicated recourse variables covering the
block's scenario, with the epigraph row bounding eta by the replicated cost.
No pair family repeats before termination; a repeat certifies optimality.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .milp import INF, Lin, Model, dot, solve_bounded_below
from .model import (ProblemInstance, Scenario, add_first_stage,
                    add_scenario_vars, recourse_row_exprs,
                    relaxation_bound_wR)
from .reformulate import (build_OU_mixed, kkt_of_recourse_lp,
                          solve_recourse)
from .report import BoundsLedger, RunConfig, SolveReport, gap_closed


def _pair_key(y_d, pi, tol_decimals: int = 6):
    return (tuple(np.round(np.asarray(y_d, dtype=float)).astype(int)),
            tuple(np.round(np.asarray(pi, dtype=float), tol_decimals)))


@dataclass
class YdPiSet:
    pairs: list              # [(y_d, pi)]
    origin: str              # feasibility | optimality
    iteration: int
    u_d: Optional[np.ndarray] = None   # fixed discrete scenario part

    def same_as(self, other: "YdPiSet", tol_decimals: int = 6) -> bool:
        if self.origin != other.origin or len(self.pairs) != len(other.pairs):
            return False
        a = np.zeros(0) if self.u_d is None else np.asarray(self.u_d)
        b = np.zeros(0) if other.u_d is None else np.asarray(other.u_d)
        if a.shape != b.shape or (a != b).any():
            return False
        mine = sorted(_pair_key(y, p, tol_decimals) for y, p in self.pairs)
        theirs = sorted(_pair_key(y, p, tol_decimals)
                        for y, p in other.pairs)
        return mine == theirs

    def to_dict(self) -> dict:
        out = {"origin": self.origin, "t": self.iteration,
               "pairs": [{"y_d": np.asarray(y).tolist(),
                          "pi": np.asarray(p).tolist()}
                         for y, p in self.pairs]}
        if self.u_d is not None:
            out["u_d"] = np.asarray(self.u_d).tolist()
        return out


def _y_d_box_size(instance: ProblemInstance, cap: int = 10_000) -> int:
    b = instance.recourse.y_d_bounds
    if instance.recourse.m_y == 0:
        return 1
    total = np.prod([np.floor(hi) - np.ceil(lo) + 1 for lo, hi in b])
    return int(min(total, cap))


def _in_list(y_d: np.ndarray, pool, tol: float = 1e-6) -> bool:
    return any(np.max(np.abs(y_d - q), initial=0.0) <= tol for q in pool)


def _remaining(deadline: Optional[float]) -> Optional[float]:
    if deadline is None:
        return None
    return max(deadline - time.perf_counter(), 0.01)


def feasibility_dual(instance: ProblemInstance, resid: np.ndarray,
                     flavor: str = "scalar"):
    """Normalized dual of the minimum-slack recourse LP at a fixed residual:
    max resid.pi over {B2c' pi <= 0, pi >= 0} with 1'pi <= 1 (scalar slack)
    or pi <= 1 (vector slack).  The value equals the slack measure."""
    rc = instance.recourse
    m = Model("feas_dual", sense="max")
    pi = m.add_vars("pi", rc.mu_y, ub=1.0 if flavor == "vector" else INF)
    for j in range(rc.n_y):
        m.add_constr(f"col[{j}]", dot(rc.B2c.T[j], pi), "<=", 0.0)
    if flavor != "vector":
        m.add_constr("norm", dot(np.ones(rc.mu_y), pi), "<=", 1.0)
    m.set_objective(dot(np.asarray(resid, dtype=float), pi))
    out = m.solve()
    return out.values(pi), float(out.objective)


def soft_recourse_dual(instance: ProblemInstance, x: np.ndarray, s: Scenario,
                       y_d: np.ndarray, weight: float) -> np.ndarray:
    """Dual of the slack-padded recourse LP min c2c.y + weight 1's at fixed
    y_d; coincides with the plain recourse dual whenever that LP is feasible
    with all dual components below the weight."""
    rc = instance.recourse
    m = Model("soft_rec")
    y = m.add_vars("y", rc.n_y)
    sl = m.add_vars("s", rc.mu_y)
    rhs = rc.rhs(x, s.u_c, s.u_d) - rc.B2d @ np.asarray(y_d, dtype=float)
    rows = [dot(rc.B2c[i], y) + Lin.var(sl[i]) for i in range(rc.mu_y)]
    names = m.add_constrs("rec", rows, ">=", rhs)
    m.set_objective(dot(rc.c2c, y) + weight * dot(np.ones(rc.mu_y), sl))
    out = m.solve()
    return np.array([out.dual[nm] for nm in names])


# ---------------------------------------------------------------------------
# inner feasibility subroutine
# ---------------------------------------------------------------------------

def inner_sp_f(instance: ProblemInstance, x_star: np.ndarray, u_star: Scenario,
               flavor: str = "scalar",
               time_limit: Optional[float] = None) -> dict:
    """Minimum recourse slack at a fixed scenario, over the full mixed-integer
    recourse set; 0 iff some (y_c, y_d) serves the scenario."""
    rc = instance.recourse
    m = Model("isp_f")
    y_c = m.add_vars("yc", rc.n_y)
    y_d = m.add_box_vars("yd", rc.y_d_bounds, integer=True)
    sl = m.add_vars("s", 1 if flavor == "scalar" else rc.mu_y)
    rows = recourse_row_exprs(instance, x_star, u_star.u_c, u_star.u_d,
                              y_c, y_d)
    for i, r in enumerate(rows):
        m.add_constr(f"cov[{i}]",
                     r + Lin.var(sl[0] if flavor == "scalar" else sl[i]),
                     ">=", 0.0)
    m.set_objective(dot(np.ones(len(sl)), sl))
    out = m.solve(time_limit=time_limit)
    if out.status != "optimal":
        return {"status": out.status}
    return {"status": "optimal", "r_f": float(out.objective),
            "y_c": out.values(y_c), "y_d": np.round(out.values(y_d))}


def inner_mp_f(instance: ProblemInstance, x_star: np.ndarray, yd_hat: list,
               bigM: float, flavor: str = "scalar",
               time_limit: Optional[float] = None) -> dict:
    """Worst slack measure over U(x*) against the current discrete recourse
    pool: max over u of min over t of the per-t penalized LP value, as one
    MILP with a per-t KKT block.  Per-t normalized duals are recovered by LP
    re-solves at the returned scenario."""
    rc = instance.recourse
    m = Model("imp_f", sense="max")
    u_c, u_d = add_scenario_vars(m, instance, x_star)
    eta = m.add_var("etaf", lb=-INF)
    for t, y_d in enumerate(yd_hat):
        blk = kkt_of_recourse_lp(m, instance, f"t{t}", x_star, u_c, u_d,
                                 bigM, fix_y_d=y_d, penalty=flavor)
        m.add_constr(f"etaf[{t}]", blk["value"] - Lin.var(eta), ">=", 0.0)
    m.set_objective(Lin.var(eta))
    out = m.solve(time_limit=time_limit)
    if out.status == "infeasible":
        return {"status": "empty_uncertainty"}
    if out.status != "optimal":
        return {"status": out.status}
    u = Scenario(out.values(u_c), np.round(out.values(u_d)))
    base = rc.rhs(x_star, u.u_c, u.u_d)
    pis = [feasibility_dual(instance, base - rc.B2d @ y_d, flavor)[0]
           for y_d in yd_hat]
    return {"status": "optimal", "eta_f_hat": float(out.objective),
            "u": u, "pis": pis}


def icp_f(instance: ProblemInstance, x_star: np.ndarray, pairs: list,
          bigM: float, flavor: str = "scalar",
          time_limit: Optional[float] = None,
          u_d: Optional[np.ndarray] = None) -> dict:
    """Correction problem: minimum recourse slack against the scenarios the
    pair family declares worst (discrete part held at the inner worst case);
    c_f = 0 exposes a discrete vector the family is missing."""
    rc = instance.recourse
    if u_d is None:
        u_d = np.zeros(instance.ddu.m_u)
    m = Model("icp_f")
    blk = build_OU_mixed(m, instance, x_star, u_d, pairs, bigM, "ou",
                         objective="slack")
    y_c = m.add_vars("yc", rc.n_y)
    y_d = m.add_box_vars("yd", rc.y_d_bounds, integer=True)
    sl = m.add_vars("s", 1 if flavor == "scalar" else rc.mu_y)
    rows = recourse_row_exprs(instance, x_star, blk.u_c, u_d, y_c, y_d)
    for i, r in enumerate(rows):
        m.add_constr(f"cov[{i}]",
                     r + Lin.var(sl[0] if flavor == "scalar" else sl[i]),
                     ">=", 0.0)
    m.set_objective(dot(np.ones(len(sl)), sl))
    out = m.solve(time_limit=time_limit)
    if out.status != "optimal":
        return {"status": out.status}
    return {"status": "optimal", "c_f": float(out.objective),
            "y_d": np.round(out.values(y_d)),
            "u": Scenario(out.values(blk.u_c), u_d)}


def run_isf(instance: ProblemInstance, x_star: np.ndarray, config: RunConfig,
            yd_init: Optional[list] = None, trace: Optional[list] = None,
            outer_t: int = 0, deadline: Optional[float] = None) -> dict:
    """Inner feasibility subroutine: eta_f = 0 (x* robustly serves every
    scenario; the grown discrete pool is returned) or eta_f > 0 with the
    correction-closed pair family certifying the uncovered scenarios."""
    rc = instance.recourse
    flavor = config.feas_slack
    tol = config.tol_feas
    yd_hat = ([np.asarray(y, dtype=float) for y in yd_init] if yd_init
              else [rc.y_d_bounds[:, 1].astype(float)])
    cap = _y_d_box_size(instance) + 1
    mp = sp = None
    for it in range(1, cap + 1):
        mp = inner_mp_f(instance, x_star, yd_hat, config.bigM, flavor,
                        _remaining(deadline))
        if mp["status"] != "optimal":
            return {"status": mp["status"]}
        if trace is not None:
            trace.append({"outer_t": outer_t, "inner_subroutine":
                          "feasibility", "inner_t": it, "phase": "I",
                          "n_yd": len(yd_hat),
                          "eta_f_hat": mp["eta_f_hat"]})
        if mp["eta_f_hat"] <= max(tol, 1e-8 * config.bigM):
            return {"status": "optimal", "eta_f": 0.0, "yd_hat": yd_hat}
        sp = inner_sp_f(instance, x_star, mp["u"], flavor,
                        _remaining(deadline))
        if sp["status"] != "optimal":
            return {"status": sp["status"]}
        if sp["r_f"] > tol:
            break                      # uncoverable scenario found
        if _in_list(sp["y_d"], yd_hat):
            # tolerance stall: the pool already holds the covering vector
            return {"status": "optimal", "eta_f": 0.0, "yd_hat": yd_hat}
        yd_hat.append(sp["y_d"])
    else:
        raise AssertionError("feasibility pool exceeded the discrete box")
    u_d_star = mp["u"].u_d
    pairs = list(zip(yd_hat, mp["pis"]))
    base = None
    for it in range(1, cap + 1):
        cp = icp_f(instance, x_star, pairs, config.bigM, flavor,
                   _remaining(deadline), u_d=u_d_star)
        if cp["status"] != "optimal":
            return {"status": cp["status"]}
        if trace is not None:
            trace.append({"outer_t": outer_t, "inner_subroutine":
                          "feasibility", "inner_t": it, "phase": "II",
                          "n_yd": len(pairs), "c_f": cp["c_f"]})
        if cp["c_f"] > tol:
            break                      # family captures the worst case
        base = rc.rhs(x_star, cp["u"].u_c, cp["u"].u_d)
        pi, _val = feasibility_dual(instance, base - rc.B2d @ cp["y_d"],
                                    flavor)
        if any(_pair_key(cp["y_d"], pi) == _pair_key(y, p)
               for y, p in pairs):
            break                      # no further repair possible
        pairs.append((cp["y_d"], pi))
    return {"status": "optimal", "eta_f": float(sp["r_f"]),
            "pairs": YdPiSet(pairs, "feasibility", outer_t,
                             u_d=u_d_star if instance.ddu.m_u else None),
            "yd_hat": yd_hat}


# ---------------------------------------------------------------------------
# inner optimality subroutine
# ---------------------------------------------------------------------------

def inner_sp_o(instance: ProblemInstance, x_star: np.ndarray,
               u_star: Scenario,
               time_limit: Optional[float] = None) -> dict:
    """Exact recourse MIP at a fixed scenario."""
    sol = solve_recourse(instance, x_star, u_star, time_limit=time_limit)
    if sol.status != "optimal":
        return {"status": sol.status}
    return {"status": "optimal", "value": float(sol.value),
            "y_c": sol.y_c, "y_d": np.round(sol.y_d)}


def inner_mp_o(instance: ProblemInstance, x_star: np.ndarray, yd_hat: list,
               bigM: float, time_limit: Optional[float] = None) -> dict:
    """Worst recourse cost over U(x*) against the current discrete pool:
    max over u of min over t of [c2d.y_d^t + slack-padded LP value], one
    MILP with per-t KKT blocks; an upper bound on the true worst cost."""
    rc = instance.recourse
    m = Model("imp_o", sense="max")
    u_c, u_d = add_scenario_vars(m, instance, x_star)
    eta = m.add_var("etao", lb=-INF)
    for t, y_d in enumerate(yd_hat):
        blk = kkt_of_recourse_lp(m, instance, f"t{t}", x_star, u_c, u_d,
                                 bigM, fix_y_d=y_d, penalty="soft",
                                 penalty_weight=bigM)
        m.add_constr(f"etao[{t}]",
                     float(rc.c2d @ y_d) + blk["value"] - Lin.var(eta),
                     ">=", 0.0)
    m.set_objective(Lin.var(eta))
    out = m.solve(time_limit=time_limit)
    if out.status == "infeasible":
        return {"status": "empty_uncertainty"}
    if out.status != "optimal":
        return {"status": out.status}
    return {"status": "optimal", "ub_in": float(out.objective),
            "u": Scenario(out.values(u_c), np.round(out.values(u_d)))}


def icp_o(instance: ProblemInstance, x_star: np.ndarray, pairs: list,
          bigM: float, time_limit: Optional[float] = None,
          u_d: Optional[np.ndarray] = None) -> dict:
    """Correction problem: minimum recourse cost against the scenarios the
    pair family declares worst (discrete part held at the inner worst case);
    a value below the inner lower bound exposes a missing (y_d, pi) pair."""
    rc = instance.recourse
    if u_d is None:
        u_d = np.zeros(instance.ddu.m_u)
    m = Model("icp_o")
    blk = build_OU_mixed(m, instance, x_star, u_d, pairs, bigM, "ou",
                         objective="cost")
    y_c = m.add_vars("yc", rc.n_y)
    y_d = m.add_box_vars("yd", rc.y_d_bounds, integer=True)
    rows = recourse_row_exprs(instance, x_star, blk.u_c, u_d, y_c, y_d)
    for i, r in enumerate(rows):
        m.add_constr(f"cov[{i}]", r, ">=", 0.0)
    m.set_objective(dot(rc.c2c, y_c) + dot(rc.c2d, y_d))
    out = m.solve(time_limit=time_limit)
    if out.status != "optimal":
        return {"status": out.status}
    return {"status": "optimal", "c_o": float(out.objective),
            "y_d": np.round(out.values(y_d)),
            "u": Scenario(out.values(blk.u_c), u_d)}


def _recourse_pair_dual(instance: ProblemInstance, x_star: np.ndarray,
                        u: Scenario, y_d: np.ndarray,
                        bigM: float) -> np.ndarray:
    sol = solve_recourse(instance, x_star, u, fix_y_d=y_d)
    if sol.status == "optimal" and sol.pi is not None:
        return sol.pi
    return soft_recourse_dual(instance, x_star, u, y_d, bigM)


def run_iso(instance: ProblemInstance, x_star: np.ndarray, yd_init: list,
            config: RunConfig, trace: Optional[list] = None,
            outer_t: int = 0, deadline: Optional[float] = None) -> dict:
    """Inner optimality subroutine at a robustly feasible x*: converges the
    inner LB/UB on the worst-case recourse cost, then closes the pair family
    through the correction loop."""
    rc = instance.recourse
    tol = config.tol_feas
    yd_hat = [np.asarray(y, dtype=float) for y in yd_init]
    cap = _y_d_box_size(instance) + 1
    lb_in, ub_in = -INF, INF
    u_last = None
    for it in range(1, cap + 1):
        mp = inner_mp_o(instance, x_star, yd_hat, config.bigM,
                        _remaining(deadline))
        if mp["status"] != "optimal":
            return {"status": mp["status"]}
        ub_in = min(ub_in, mp["ub_in"])
        u_last = mp["u"]
        sp = inner_sp_o(instance, x_star, u_last, _remaining(deadline))
        if sp["status"] != "optimal":
            return {"status": sp["status"]}
        lb_in = max(lb_in, sp["value"])
        if trace is not None:
            trace.append({"outer_t": outer_t, "inner_subroutine":
                          "optimality", "inner_t": it, "phase": "I",
                          "n_yd": len(yd_hat), "LB_in": lb_in,
                          "UB_in": ub_in})
        if gap_closed(lb_in, ub_in, tol):
            break
        if _in_list(sp["y_d"], yd_hat):
            break                      # tolerance stall at the incumbent
        yd_hat.append(sp["y_d"])
    pairs = [(y_d,
              _recourse_pair_dual(instance, x_star, u_last, y_d, config.bigM))
             for y_d in yd_hat]
    for it in range(1, cap + 1):
        cp = icp_o(instance, x_star, pairs, config.bigM,
                   _remaining(deadline), u_d=u_last.u_d)
        if cp["status"] != "optimal":
            return {"status": cp["status"]}
        if trace is not None:
            trace.append({"outer_t": outer_t, "inner_subroutine":
                          "optimality", "inner_t": it, "phase": "II",
                          "n_yd": len(pairs), "c_o": cp["c_o"]})
        if cp["c_o"] >= lb_in - tol:
            break                      # family captures the worst case
        pi = _recourse_pair_dual(instance, x_star, cp["u"], cp["y_d"],
                                 config.bigM)
        if any(_pair_key(cp["y_d"], pi) == _pair_key(y, p)
               for y, p in pairs):
            break
        pairs.append((cp["y_d"], pi))
    return {"status": "optimal", "eta_o": float(ub_in),
            "lb_in": float(lb_in),
            "pairs": YdPiSet(pairs, "optimality", outer_t,
                             u_d=u_last.u_d if instance.ddu.m_u else None),
            "yd_hat": yd_hat}


# ---------------------------------------------------------------------------
# outer master and loop
# ---------------------------------------------------------------------------

class OuterMaster:
    """Growing master MILP: min c1 x + eta over X plus one cutting-set block
    per recorded pair family, kept alive across outer iterations.  Each block
    holds the family's uncertainty variables, replicated mixed-integer
    recourse covering the block's scenario, and the epigraph row on eta."""

    def __init__(self, instance: ProblemInstance, bigM: float,
                 floor: Optional[float] = None):
        self.instance = instance
        self.bigM = bigM
        self.m = Model("omp")
        self.xs = add_first_stage(self.m, instance)
        self.eta = self.m.add_var("eta", lb=-INF)
        self.m.add_constr("eta_floor", Lin.var(self.eta), ">=", -bigM)
        self._has_floor = True
        obj = dot(instance.c1, self.xs) + Lin.var(self.eta)
        if floor is not None and np.isfinite(floor):
            self.m.add_constr("obj_floor", obj, ">=", floor)
        self.m.set_objective(obj)
        self.n_sets = 0

    def add_set(self, s: YdPiSet) -> None:
        inst = self.instance
        rc = inst.recourse
        tag = f"set{self.n_sets}"
        self.n_sets += 1
        flavor = "slack" if s.origin == "feasibility" else "cost"
        u_d = (np.zeros(inst.ddu.m_u) if s.u_d is None
               else np.asarray(s.u_d, dtype=float))
        blk = build_OU_mixed(self.m, inst, self.xs, u_d, s.pairs,
                             self.bigM, tag, objective=flavor)
        y_c = self.m.add_vars(f"{tag}_yc", rc.n_y)
        y_d = self.m.add_box_vars(f"{tag}_yd", rc.y_d_bounds, integer=True)
        rows = recourse_row_exprs(inst, self.xs, blk.u_c, u_d, y_c, y_d)
        for i, r in enumerate(rows):
            # u_dot deactivates the block when the slice U(x | u_d) empties
            self.m.add_constr(f"{tag}_rec[{i}]", r + blk.u_dot, ">=", 0.0)
        self.m.add_constr(
            f"{tag}_eta",
            dot(rc.c2c, y_c) + dot(rc.c2d, y_d) - blk.u_dot
            - Lin.var(self.eta),
            "<=", 0.0)
        if self._has_floor:
            self.m.remove_constr("eta_floor")
            self._has_floor = False

    def solve(self, time_limit: Optional[float] = None,
              ub: Optional[float] = None):
        return solve_bounded_below(self.m, ub, time_limit)


def build_omp(instance: ProblemInstance, sets, bigM: float = 1e4,
              floor: Optional[float] = None) -> OuterMaster:
    """Outer master over a recorded sequence of pair-family cutting sets."""
    master = OuterMaster(instance, bigM, floor)
    for s in sets:
        master.add_set(s)
    return master


def run_nested(instance: ProblemInstance,
               config: Optional[RunConfig] = None) -> SolveReport:
    """Exact min-max-min solve for polytope uncertainty and MIP recourse."""
    if instance.ddu.m_u:
        raise ValueError("discrete uncertainty dimensions require the "
                         "extended algorithm")
    if instance.recourse.m_y == 0:
        raise ValueError("LP recourse is handled by the single-level cut "
                         "algorithm")
    return outer_loop(instance, config or RunConfig(algo="nested"))


def outer_loop(instance: ProblemInstance, config: RunConfig) -> SolveReport:
    """Shared outer loop: master over pair-family cutting sets alternating
    with the inner feasibility/optimality subroutines at the incumbent."""
    t0 = time.perf_counter()
    deadline = t0 + config.time_limit
    ledger = BoundsLedger(config.tol_feas)
    trace: list = []
    sets: list = []
    lb = -INF
    if config.init == "relax":
        wr = relaxation_bound_wR(instance)
        if wr.status == "infeasible":
            return SolveReport("infeasible", None, None, INF, INF, 0,
                               time.perf_counter() - t0,
                               stop_reason="relaxation_infeasible",
                               ledger=ledger, config=config.to_dict())
        if wr.status == "optimal":
            lb = wr.value
    master = OuterMaster(instance, config.bigM,
                         lb if np.isfinite(lb) else None)
    ub = INF
    inc_x, inc_eta = None, None
    x_history: list = []
    yd_carry: Optional[list] = None
    status, stop = "limit", "iter_limit"
    t = 0
    for t in range(1, config.max_iters + 1):
        if time.perf_counter() >= deadline:
            status, stop = "limit", "time_limit"
            break
        out = master.solve(time_limit=_remaining(deadline), ub=ub)
        if out.status == "infeasible":
            return SolveReport("infeasible", None, None, lb, ub, t,
                               time.perf_counter() - t0,
                               stop_reason="master_infeasible",
                               ledger=ledger,
                               cuts=[s.to_dict() for s in sets],
                               config=config.to_dict())
        if out.status != "optimal":
            status, stop = "limit", "time_limit"
            break
        master_obj = out.objective
        x_star = out.values(master.xs)
        isf = run_isf(instance, x_star, config, yd_init=yd_carry,
                      trace=trace, outer_t=t, deadline=deadline)
        if isf["status"] == "empty_uncertainty":
            return SolveReport("infeasible", None, x_star, lb, ub, t,
                               time.perf_counter() - t0,
                               stop_reason="empty_uncertainty",
                               ledger=ledger,
                               cuts=[s.to_dict() for s in sets],
                               config=config.to_dict())
        if isf["status"] != "optimal":
            status, stop = "limit", "time_limit"
            break
        if config.inheritance:
            yd_carry = isf["yd_hat"]
        if isf["eta_f"] > config.tol_feas:
            new_set, kind = isf["pairs"], "feasibility"
        else:
            iso = run_iso(instance, x_star, isf["yd_hat"], config,
                          trace=trace, outer_t=t, deadline=deadline)
            if iso["status"] != "optimal":
                status, stop = "limit", "time_limit"
                break
            new_set, kind = iso["pairs"], "optimality"
            cand = instance.c1 @ x_star + iso["eta_o"]
            if cand < ub:
                ub, inc_x, inc_eta = cand, x_star, iso["eta_o"]
        if master_obj > ub + 1e-6 * max(1.0, abs(ub)):
            # relaxation value above a certified incumbent: backend noise;
            # retry against the fresh cap, then clamp
            out2 = master.solve(time_limit=_remaining(deadline), ub=ub)
            if out2.status == "optimal":
                master_obj = min(master_obj, out2.objective)
        lb = max(lb, min(master_obj, ub))
        ledger.add(t, lb, ub, cut_kind=kind, n_pairs=len(new_set.pairs))
        if gap_closed(lb, ub, config.tol_gap):
            status, stop = "optimal", "gap"
            break
        repeated_set = any(new_set.same_as(s) for s in sets)
        sets.append(new_set)
        if not repeated_set:
            master.add_set(new_set)
        repeated_x = any(np.max(np.abs(x_star - xh), initial=0.0) <= 1e-6
                         for xh in x_history)
        x_history.append(x_star)
        if repeated_x or repeated_set:
            # a repeated master solution or pair family certifies optimality
            # of the incumbent
            if np.isfinite(ub):
                status = "optimal"
                stop = "repeated_x" if repeated_x else "repeated_cut"
                break
    wall = time.perf_counter() - t0
    value = ub if np.isfinite(ub) else None
    if status == "optimal" and stop in ("repeated_x", "repeated_cut"):
        lb = ub
    return SolveReport(status, value, inc_x, lb, ub, t, wall,
                       stop_reason=stop, ledger=ledger,
                       cuts=[s.to_dict() for s in sets],
                       config=config.to_dict(),
                       extra={"eta_o": inc_eta, "inner_trace": trace})
