"""Single-level reformulation builders.

Everything that turns a bilevel/min-max structure into one MILP lives here:

* the penalized parametric LP over a fixed-discrete-part uncertainty slice,
  whose slack dichotomy detects empty slices;
* generic KKT blocks (with big-M linearized complementarity) for embedded
  inner LPs, used to collapse max-min subproblems into single MILPs;
* the optimal-uncertainty blocks OU attached to master problems: one per
  recorded dual point (LP recourse), per (y_d, pi) pair family (MIP
  recourse), and the mixed form carrying both a fixed discrete scenario
  part and a pair family;
* the binary indicator gadget that deactivates a cutting set when its
  uncertainty slice is empty.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .milp import INF, Lin, Model, as_lin, dot, mat_vec
from .model import (ProblemInstance, Scenario, add_scenario_vars,
                    u_membership_exprs)


# ---------------------------------------------------------------------------
# complementarity linearization
# ---------------------------------------------------------------------------

def add_complementarity(m: Model, name: str, s_expr, t_expr,
                        M: float) -> str:
    """Rows enforcing s*t = 0 for s, t >= 0 via one binary switch."""
    delta = m.add_var(f"{name}_delta", binary=True)
    m.add_constr(f"{name}_s", as_lin(s_expr) - M * Lin.var(delta), "<=", 0.0)
    m.add_constr(f"{name}_t", as_lin(t_expr) + M * Lin.var(delta), "<=", M)
    return delta


def complementarity_products(outcome, model: Model) -> float:
    """Largest s*t over all linearized pairs of a solved model.

    Pairs are recognized by the `_s`/`_t` row-name convention of
    add_complementarity; each row value is recomputed from the primal.
    """
    worst = 0.0
    for cname, (expr, _sense, rhs) in model._constrs.items():
        if not cname.endswith("_s"):
            continue
        base = cname[:-2]
        tname = base + "_t"
        if tname not in model._constrs:
            continue
        delta = base + "_delta"

        def _eval(nm):
            e, _, r = model._constrs[nm]
            val = e.const + sum(c * outcome.primal[v]
                                for v, c in e.terms.items()
                                if v != delta)
            return val

        # dropping the delta term recovers s from "s - M*delta <= 0"
        # and t from "t + M*delta <= M"
        s = _eval(cname)
        t = _eval(tname)
        worst = max(worst, max(s, 0.0) * max(t, 0.0))
    return worst


# ---------------------------------------------------------------------------
# generic embedded-LP KKT block
# ---------------------------------------------------------------------------

def add_lp_kkt(m: Model, tag: str, W: np.ndarray, q: np.ndarray,
               r_exprs: Sequence, M: float) -> dict:
    """KKT rows for the inner LP  min{q.v : W v >= r, v >= 0}.

    r may contain affine expressions in outer variables, making the block
    usable inside max-min reformulations.  Returns variable-name groups and
    the optimal-value expression q.v.
    """
    W = np.asarray(W, dtype=float)
    q = np.asarray(q, dtype=float).reshape(-1)
    mu, nv = W.shape
    v = m.add_vars(f"{tag}_v", nv)
    lam = m.add_vars(f"{tag}_lam", mu)
    slacks = []
    for i in range(mu):
        s = dot(W[i], v) - as_lin(r_exprs[i])
        slacks.append(s)
        m.add_constr(f"{tag}_pf[{i}]", s, ">=", 0.0)
    dual_slacks = []
    wt = W.T
    for j in range(nv):
        ds = q[j] - dot(wt[j], lam)
        dual_slacks.append(ds)
        m.add_constr(f"{tag}_df[{j}]", ds, ">=", 0.0)
    deltas = []
    for i in range(mu):
        deltas.append(add_complementarity(
            m, f"{tag}_cr[{i}]", Lin.var(lam[i]), slacks[i], M))
    for j in range(nv):
        deltas.append(add_complementarity(
            m, f"{tag}_cc[{j}]", Lin.var(v[j]), dual_slacks[j], M))
    return {"v": v, "lam": lam, "deltas": deltas, "value": dot(q, v)}


# ---------------------------------------------------------------------------
# parametric LP over a fixed-u_d slice (slack dichotomy)
# ---------------------------------------------------------------------------

def build_parametric_lp(instance: ProblemInstance, x: np.ndarray,
                        u_d: np.ndarray, beta: np.ndarray,
                        bigM: float = 1e4):
    """Penalized LP  max (-E_c u_c).beta - M 1.u~  over the relaxed slice
    {F_c u_c - u~ <= h + Gx - F_d(x) u_d, u_c >= 0, u~ >= 0}.

    Always feasible and bounded; optimal u~ = 0 iff the slice is nonempty.
    Returns (model, names) with names = {"u_c": [...], "u_tilde": [...]}.
    """
    ddu, rc = instance.ddu, instance.recourse
    beta = np.asarray(beta, dtype=float).reshape(rc.mu_y)
    x = np.asarray(x, dtype=float).reshape(instance.n_first)
    u_d = np.asarray(u_d, dtype=float).reshape(ddu.m_u)
    if not ddu.u_d_in_box(u_d):
        raise ValueError("u_d outside the discrete uncertainty box")
    m = Model("parametric_lp", sense="max")
    u_c = m.add_vars("uc", ddu.n_u)
    u_t = m.add_vars("ut", ddu.mu_u)
    rows = u_membership_exprs(instance, x, u_c, u_d)
    for i in range(ddu.mu_u):
        m.add_constr(f"slice[{i}]", rows[i] - Lin.var(u_t[i]), "<=", 0.0)
    obj = Lin()
    if ddu.n_u:
        obj = dot(-(rc.E_c.T @ beta), u_c)
    obj = obj - bigM * dot(np.ones(ddu.mu_u), u_t)
    m.set_objective(obj)
    return m, {"u_c": u_c, "u_tilde": u_t}


def slice_feasible(instance: ProblemInstance, x: np.ndarray,
                   u_d: np.ndarray, tol: float = 1e-6) -> bool:
    """Direct feasibility check of the slice U(x | u_d)."""
    m, names = build_parametric_lp(instance, x, u_d,
                                   np.zeros(instance.recourse.mu_y), 1.0)
    out = m.solve()
    total = sum(out.primal[n] for n in names["u_tilde"])
    return total <= tol


# ---------------------------------------------------------------------------
# indicator gadget
# ---------------------------------------------------------------------------

@dataclass
class IndicatorGadget:
    theta: str
    u_dot: Lin            # M * theta, the deactivation term
    link_row: str


def add_indicator(m: Model, tag: str, u_tilde: Sequence[str],
                  M: float, eps: Optional[float] = None) -> IndicatorGadget:
    """Binary theta with eps * theta <= 1.u~, so the M*theta term can only
    relax rows when the slice slack clears a real margin.

    The margin guards against big-M tolerance cascades: a binary accepted at
    1e-8 by the solver leaks M * 1e-8 of slack through its complementarity
    row, and a proportional link theta <= M * 1.u~ would amplify exactly
    that leak into a full deactivation.  The default margin is ten times the
    worst-case total leak of all gated rows at the backend's integrality
    tolerance (1e-7), floored at 1e-2.  Slices are assumed to be nonempty
    or empty by more than eps."""
    if eps is None:
        eps = max(1e-2, 10.0 * len(u_tilde) * M * 1e-7)
    theta = m.add_var(f"{tag}_theta", binary=True)
    link = m.add_constr(f"{tag}_theta_link",
                        Lin.var(theta, eps) - dot(np.ones(len(u_tilde)),
                                                  u_tilde), "<=", 0.0)
    return IndicatorGadget(theta, Lin.var(theta, M), link)


# ---------------------------------------------------------------------------
# OU blocks
# ---------------------------------------------------------------------------

@dataclass
class OUBlock:
    block_id: str
    kind: str                      # point_u | tuple_yd_pi | mixed
    fixed_u_d: Optional[np.ndarray]
    pairs: list                    # [(y_d, pi)] for tuple/mixed kinds
    u_c: list = field(default_factory=list)
    u_tilde: list = field(default_factory=list)
    lam: list = field(default_factory=list)
    mu: list = field(default_factory=list)
    eta_hat: Optional[str] = None
    indicator: Optional[IndicatorGadget] = None
    deltas: list = field(default_factory=list)

    @property
    def u_dot(self) -> Lin:
        return self.indicator.u_dot if self.indicator else Lin()


def build_OU_point(m: Model, instance: ProblemInstance, x_expr,
                   u_d: np.ndarray, pi: np.ndarray, bigM: float,
                   tag: str) -> OUBlock:
    """Optimality block for a recorded (u_d, dual) with LP recourse.

    Encodes the maximizers of (-E_c u_c).pi over the slack-relaxed slice
    U(x | u_d): primal feasibility, dual feasibility with lambda <= M, and
    the three complementarity families, all big-M linearized.  pi may be an
    extreme dual point or a normalized ray (feasibility records).

    Instances declaring meta["ddu_nonempty"] skip the emptiness indicator:
    with every slice guaranteed nonempty, theta could never activate, and
    proving that inside each master is by far its hardest subtree.
    """
    ddu, rc = instance.ddu, instance.recourse
    u_d = np.asarray(u_d, dtype=float).reshape(ddu.m_u)
    pi = np.asarray(pi, dtype=float).reshape(rc.mu_y)
    u_c = m.add_vars(f"{tag}_uc", ddu.n_u)
    u_t = m.add_vars(f"{tag}_ut", ddu.mu_u)
    lam = m.add_vars(f"{tag}_lam", ddu.mu_u, ub=bigM)
    rows = u_membership_exprs(instance, x_expr, u_c, u_d)
    slacks = []
    for i in range(ddu.mu_u):
        expr = rows[i] - Lin.var(u_t[i])
        m.add_constr(f"{tag}_pf[{i}]", expr, "<=", 0.0)
        slacks.append(-expr)
    # inner objective is max (-E_c u_c).pi - M 1.u~; as a min of the negative
    # the dual-feasibility rows read F_c'lam >= -E_c'pi and lam <= M 1.
    et_pi = rc.E_c.T @ pi if ddu.n_u else np.zeros(0)
    dual_slacks = []
    for j in range(ddu.n_u):
        ds = dot(ddu.F_c.T[j], lam) + et_pi[j]
        m.add_constr(f"{tag}_df[{j}]", ds, ">=", 0.0)
        dual_slacks.append(ds)
    deltas = []
    for i in range(ddu.mu_u):
        deltas.append(add_complementarity(
            m, f"{tag}_cr[{i}]", Lin.var(lam[i]), slacks[i], bigM))
    for j in range(ddu.n_u):
        deltas.append(add_complementarity(
            m, f"{tag}_cc[{j}]", Lin.var(u_c[j]), dual_slacks[j], bigM))
    for i in range(ddu.mu_u):
        deltas.append(add_complementarity(
            m, f"{tag}_ct[{i}]", Lin.var(u_t[i]),
            bigM - Lin.var(lam[i]), bigM))
    gadget = (None if instance.meta.get("ddu_nonempty")
              else add_indicator(m, tag, u_t, bigM))
    return OUBlock(tag, "point_u", u_d, [(None, pi)], u_c, u_t, lam,
                   [], None, gadget, deltas)


def _pair_row_expr(instance: ProblemInstance, x_expr, u_c_expr, u_d_const,
                   y_d: np.ndarray, pi: np.ndarray,
                   include_cost: bool = True) -> Lin:
    """c2d.y_d + (d - B1 x - E u - B2d y_d).pi as an affine expression; the
    c2d term is dropped for slack-objective (feasibility) pair families."""
    rc = instance.recourse
    y_d = np.asarray(y_d, dtype=float).reshape(rc.m_y)
    const = float(pi @ (rc.d - rc.B2d @ y_d))
    if include_cost:
        const += float(rc.c2d @ y_d)
    expr = as_lin(const) - dot(pi @ rc.B1, x_expr)
    if instance.ddu.n_u:
        expr = expr - dot(pi @ rc.E_c, u_c_expr)
    if instance.ddu.m_u and u_d_const is not None:
        expr = expr - float(pi @ (rc.E_d @ u_d_const))
    return expr


def _check_pairs(instance: ProblemInstance, pairs) -> list:
    if not pairs:
        raise ValueError("empty (y_d, pi) pair family")
    seen = set()
    out = []
    for y_d, pi in pairs:
        y_d = np.asarray(y_d, dtype=float).reshape(instance.recourse.m_y)
        pi = np.asarray(pi, dtype=float).reshape(instance.recourse.mu_y)
        key = (tuple(np.round(y_d).astype(int)), tuple(np.round(pi, 9)))
        if key in seen:
            raise ValueError("duplicate (y_d, pi) in pair family")
        seen.add(key)
        out.append((y_d, pi))
    return out


def build_OU_tuple(m: Model, instance: ProblemInstance, x_expr,
                   pairs, bigM: float, tag: str,
                   objective: str = "cost") -> OUBlock:
    """Optimality block over a (y_d, pi) pair family, continuous u only.

    Encodes maximizers of eta^ = min_t [c2d y_d^t + (d - B1x - Eu -
    B2d y_d^t).pi^t] over u in U(x): per-pair eta^ rows, membership, dual
    feasibility with convex multipliers mu summing to one, and linearized
    complementarities.
    """
    ddu = instance.ddu
    if ddu.m_u:
        raise ValueError("pair-family block requires purely continuous u")
    pairs = _check_pairs(instance, pairs)
    T = len(pairs)
    u_c = m.add_vars(f"{tag}_uc", ddu.n_u)
    lam = m.add_vars(f"{tag}_lam", ddu.mu_u)
    mu = m.add_vars(f"{tag}_mu", T, ub=1.0)
    eta_hat = m.add_var(f"{tag}_etah", lb=-INF)
    row_exprs = []
    for t, (y_d, pi) in enumerate(pairs):
        expr = _pair_row_expr(instance, x_expr, u_c, None, y_d, pi,
                              include_cost=objective == "cost")
        gap = expr - Lin.var(eta_hat)
        m.add_constr(f"{tag}_eh[{t}]", gap, ">=", 0.0)
        row_exprs.append(gap)
    rows = u_membership_exprs(instance, x_expr, u_c, np.zeros(0))
    slacks = []
    for i in range(ddu.mu_u):
        m.add_constr(f"{tag}_pf[{i}]", rows[i], "<=", 0.0)
        slacks.append(-rows[i])
    # stationarity for max eta^: F'lam + sum_t (E'pi^t) mu^t >= 0, sum mu = 1
    dual_slacks = []
    for j in range(ddu.n_u):
        ds = dot(ddu.F_c.T[j], lam)
        for t, (_y_d, pi) in enumerate(pairs):
            coef = float(instance.recourse.E_c.T[j] @ pi)
            if coef:
                ds = ds + Lin.var(mu[t], coef)
        m.add_constr(f"{tag}_df[{j}]", ds, ">=", 0.0)
        dual_slacks.append(ds)
    m.add_constr(f"{tag}_convex", dot(np.ones(T), mu), "==", 1.0)
    deltas = []
    for t in range(T):
        deltas.append(add_complementarity(
            m, f"{tag}_cm[{t}]", Lin.var(mu[t]), row_exprs[t], bigM))
    for i in range(ddu.mu_u):
        deltas.append(add_complementarity(
            m, f"{tag}_cr[{i}]", Lin.var(lam[i]), slacks[i], bigM))
    for j in range(ddu.n_u):
        deltas.append(add_complementarity(
            m, f"{tag}_cc[{j}]", Lin.var(u_c[j]), dual_slacks[j], bigM))
    return OUBlock(tag, "tuple_yd_pi", None, pairs, u_c, [], lam, mu,
                   eta_hat, None, deltas)


def build_OU_mixed(m: Model, instance: ProblemInstance, x_expr,
                   u_d: np.ndarray, pairs, bigM: float, tag: str,
                   objective: str = "cost") -> OUBlock:
    """Pair-family block with a fixed discrete scenario part and the slack
    machinery of the point block; degenerates to build_OU_tuple when the
    uncertainty has no discrete part."""
    ddu, rc = instance.ddu, instance.recourse
    if ddu.m_u == 0:
        return build_OU_tuple(m, instance, x_expr, pairs, bigM, tag,
                              objective=objective)
    u_d = np.asarray(u_d, dtype=float).reshape(ddu.m_u)
    pairs = _check_pairs(instance, pairs)
    T = len(pairs)
    u_c = m.add_vars(f"{tag}_uc", ddu.n_u)
    u_t = m.add_vars(f"{tag}_ut", ddu.mu_u)
    lam = m.add_vars(f"{tag}_lam", ddu.mu_u, ub=bigM)
    mu = m.add_vars(f"{tag}_mu", T, ub=1.0)
    eta_hat = m.add_var(f"{tag}_etah", lb=-INF)
    row_exprs = []
    for t, (y_d, pi) in enumerate(pairs):
        expr = _pair_row_expr(instance, x_expr, u_c, u_d, y_d, pi,
                              include_cost=objective == "cost")
        gap = expr - Lin.var(eta_hat)
        m.add_constr(f"{tag}_eh[{t}]", gap, ">=", 0.0)
        row_exprs.append(gap)
    rows = u_membership_exprs(instance, x_expr, u_c, u_d)
    slacks = []
    for i in range(ddu.mu_u):
        expr = rows[i] - Lin.var(u_t[i])
        m.add_constr(f"{tag}_pf[{i}]", expr, "<=", 0.0)
        slacks.append(-expr)
    dual_slacks = []
    for j in range(ddu.n_u):
        ds = dot(ddu.F_c.T[j], lam)
        for t, (_y_d, pi) in enumerate(pairs):
            coef = float(rc.E_c.T[j] @ pi)
            if coef:
                ds = ds + Lin.var(mu[t], coef)
        m.add_constr(f"{tag}_df[{j}]", ds, ">=", 0.0)
        dual_slacks.append(ds)
    m.add_constr(f"{tag}_convex", dot(np.ones(T), mu), "==", 1.0)
    deltas = []
    for t in range(T):
        deltas.append(add_complementarity(
            m, f"{tag}_cm[{t}]", Lin.var(mu[t]), row_exprs[t], bigM))
    for i in range(ddu.mu_u):
        deltas.append(add_complementarity(
            m, f"{tag}_cr[{i}]", Lin.var(lam[i]), slacks[i], bigM))
    for j in range(ddu.n_u):
        deltas.append(add_complementarity(
            m, f"{tag}_cc[{j}]", Lin.var(u_c[j]), dual_slacks[j], bigM))
    for i in range(ddu.mu_u):
        deltas.append(add_complementarity(
            m, f"{tag}_ct[{i}]", Lin.var(u_t[i]),
            bigM - Lin.var(lam[i]), bigM))
    gadget = (None if instance.meta.get("ddu_nonempty")
              else add_indicator(m, tag, u_t, bigM))
    return OUBlock(tag, "mixed", u_d, pairs, u_c, u_t, lam, mu, eta_hat,
                   gadget, deltas)


# ---------------------------------------------------------------------------
# recourse helpers
# ---------------------------------------------------------------------------

def kkt_of_recourse_lp(m: Model, instance: ProblemInstance, tag: str,
                       x_expr, u_c_expr, u_d_expr, bigM: float,
                       fix_y_d: Optional[np.ndarray] = None,
                       penalty: Optional[str] = None,
                       penalty_weight: float = 1.0) -> dict:
    """Embed the continuous recourse LP (y_d fixed or absent) as KKT rows.

    penalty: None (plain LP), "vector" (per-row slack, objective replaced by
    the weighted slack sum — the feasibility measure), "scalar" (one shared
    slack, the scalar feasibility measure), or "soft" (slacks appended to
    the cost objective with the given weight, keeping the inner LP feasible
    for every right-hand side).
    Returns add_lp_kkt's groups plus "value" = inner optimal value expr.
    """
    rc = instance.recourse
    rhs = _recourse_rhs_exprs(instance, x_expr, u_c_expr, u_d_expr, fix_y_d)
    if penalty == "vector":
        W = np.hstack([rc.B2c, np.eye(rc.mu_y)])
        q = np.concatenate([np.zeros(rc.n_y),
                            penalty_weight * np.ones(rc.mu_y)])
    elif penalty == "scalar":
        W = np.hstack([rc.B2c, np.ones((rc.mu_y, 1))])
        q = np.concatenate([np.zeros(rc.n_y), [penalty_weight]])
    elif penalty == "soft":
        W = np.hstack([rc.B2c, np.eye(rc.mu_y)])
        q = np.concatenate([rc.c2c, penalty_weight * np.ones(rc.mu_y)])
    else:
        W = rc.B2c
        q = rc.c2c
    return add_lp_kkt(m, tag, W, q, rhs, bigM)


def add_scenario_kkt_value(m: Model, instance: ProblemInstance,
                           x: np.ndarray, bigM: float, tag: str = "sp",
                           penalty: Optional[str] = None,
                           penalty_weight: float = 1.0) -> dict:
    """Scenario variables ranging over U(x) at a fixed first stage, plus the
    KKT block of the continuous recourse LP at that scenario.

    Returns the block dict (with "u_c"/"u_d" name groups added); maximizing
    its "value" expression over the combined model solves the worst-case
    subproblem as a single MILP (LP recourse).
    """
    u_c, u_d = add_scenario_vars(m, instance, x, prefix=f"{tag}_u")
    blk = kkt_of_recourse_lp(m, instance, f"{tag}_rec", x, u_c, u_d, bigM,
                             penalty=penalty, penalty_weight=penalty_weight)
    blk["u_c"], blk["u_d"] = u_c, u_d
    return blk


def _recourse_rhs_exprs(instance: ProblemInstance, x_expr, u_c_expr,
                        u_d_expr, fix_y_d) -> list:
    """d - B1 x - E_c u_c - E_d u_d - B2d y_d as per-row expressions."""
    rc = instance.recourse
    out = [as_lin(float(di)) for di in rc.d]
    for mat, expr in ((rc.B1, x_expr), (rc.E_c, u_c_expr),
                      (rc.E_d, u_d_expr)):
        if mat.shape[1] and expr is not None:
            sub = mat_vec(mat, expr)
            out = [o - s for o, s in zip(out, sub)]
    if fix_y_d is not None and rc.m_y:
        shift = rc.B2d @ np.asarray(fix_y_d, dtype=float).reshape(rc.m_y)
        out = [o - float(s) for o, s in zip(out, shift)]
    return out


@dataclass
class RecourseSolution:
    status: str
    value: Optional[float]
    y_c: Optional[np.ndarray] = None
    y_d: Optional[np.ndarray] = None
    pi: Optional[np.ndarray] = None


def solve_recourse(instance: ProblemInstance, x: np.ndarray, s: Scenario,
                   fix_y_d: Optional[np.ndarray] = None,
                   relax: bool = False,
                   time_limit: Optional[float] = None) -> RecourseSolution:
    """min c2.y over Y(x, u) at fixed (x, u); optionally with y_d fixed or
    integrality relaxed.  Duals are reported only for pure-LP solves."""
    rc = instance.recourse
    m = Model("recourse")
    y_c = m.add_vars("yc", rc.n_y)
    rhs = rc.rhs(x, s.u_c, s.u_d)
    obj = dot(rc.c2c, y_c)
    if rc.m_y and fix_y_d is not None:
        fix = np.asarray(fix_y_d, dtype=float).reshape(rc.m_y)
        rhs = rhs - rc.B2d @ fix
        obj = obj + float(rc.c2d @ fix)
        y_d_names = []
    else:
        y_d_names = m.add_box_vars("yd", rc.y_d_bounds,
                                   integer=not relax)
        obj = obj + dot(rc.c2d, y_d_names)
    rows = mat_vec(rc.B2c, y_c)
    if y_d_names:
        rows = [a + b for a, b in zip(rows, mat_vec(rc.B2d, y_d_names))]
    names = m.add_constrs("rec", rows, ">=", rhs)
    m.set_objective(obj)
    out = m.solve(time_limit=time_limit)
    if out.status != "optimal":
        return RecourseSolution(out.status, None)
    pi = None
    if m.num_integer == 0:
        pi = np.array([out.dual[nm] for nm in names])
    y_d_val = (np.asarray(fix_y_d, dtype=float).reshape(rc.m_y)
               if rc.m_y and fix_y_d is not None
               else out.values(y_d_names) if y_d_names else np.zeros(0))
    return RecourseSolution("optimal", out.objective, out.values(y_c),
                            y_d_val, pi)


def recourse_lp_dual(instance: ProblemInstance, x: np.ndarray, s: Scenario,
                     y_d: Optional[np.ndarray] = None) -> RecourseSolution:
    """Continuous-part recourse LP at fixed y_d with its dual vector."""
    fix = y_d if instance.recourse.m_y else None
    if instance.recourse.m_y and fix is None:
        raise ValueError("y_d required when the recourse has integers")
    return solve_recourse(instance, x, s, fix_y_d=fix)
