"""Problem data model for two-stage robust optimization with a
decision-dependent uncertainty (DDU) set.

The problem solved throughout the package is

    w* = min_{x in X} c1.x + max_{u in U(x)} min_{y in Y(x,u)} c2.y

with X a mixed integer polyhedron, U(x) a mixed integer set whose constraint
matrix on the discrete part and right-hand side depend affinely on x, and
Y(x,u) a mixed integer recourse set.  This module owns the instance types,
validation, membership checks, JSON serialization, and the monolithic
single-scenario relaxation bound w_R.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Iterator, Optional

import numpy as np

from .milp import INF, Lin, Model, dot, mat_vec


def _arr(a, shape=None) -> np.ndarray:
    out = np.asarray(a, dtype=float)
    if shape is not None:
        out = out.reshape(shape)
    return out


def _shaped(a, *shape) -> np.ndarray:
    """Reshape, tolerating empty arrays where -1 would be ambiguous."""
    out = np.asarray(a, dtype=float)
    if out.size:
        return out.reshape(shape)
    resolved = tuple(
        (out.shape[i] if i < out.ndim else 0) if s == -1 else s
        for i, s in enumerate(shape))
    return np.zeros(resolved)


@dataclass
class FirstStageSet:
    """X = {x in R^n_x_+ x Z^m_x_+ : A x >= b}; integer parts finitely boxed."""

    n_x: int
    m_x: int
    A: np.ndarray            # (rows, n_x + m_x)
    b: np.ndarray
    integer_bounds: np.ndarray  # (m_x, 2)

    def __post_init__(self):
        n = self.n_x + self.m_x
        self.A = _shaped(self.A, -1, n)
        self.b = _arr(self.b).reshape(-1)
        self.integer_bounds = _shaped(self.integer_bounds, self.m_x, 2)

    @property
    def n(self) -> int:
        return self.n_x + self.m_x


@dataclass
class DduSet:
    """U(x) = {(u_c, u_d): F_c u_c + F_d(x) u_d <= h + G x, u_c >= 0,
    u_d integer in a finite box satisfying optional pure-u_d rows}.

    F_d(x) = F_d0 + sum_k x_k * F_d_lin[k], affine in the first stage.
    """

    n_u: int
    m_u: int
    F_c: np.ndarray        # (mu_u, n_u)
    F_d0: np.ndarray       # (mu_u, m_u)
    F_d_lin: np.ndarray    # (n_first, mu_u, m_u)
    G: np.ndarray          # (mu_u, n_first)
    h: np.ndarray          # (mu_u,)
    u_d_bounds: np.ndarray  # (m_u, 2)
    pure_C: np.ndarray = field(default=None)    # (rows, m_u), C u_d <= pure_rhs
    pure_rhs: np.ndarray = field(default=None)

    def __post_init__(self):
        self.h = _arr(self.h).reshape(-1)
        mu = self.h.shape[0]
        self.F_c = _shaped(self.F_c, mu, self.n_u)
        self.F_d0 = _shaped(self.F_d0, mu, self.m_u)
        self.F_d_lin = _shaped(self.F_d_lin, -1, mu, self.m_u)
        self.G = _shaped(self.G, mu, -1)
        self.u_d_bounds = _shaped(self.u_d_bounds, self.m_u, 2)
        if self.pure_C is None:
            self.pure_C = np.zeros((0, self.m_u))
            self.pure_rhs = np.zeros(0)
        else:
            self.pure_C = _shaped(self.pure_C, -1, self.m_u)
            self.pure_rhs = _arr(self.pure_rhs).reshape(-1)

    @property
    def mu_u(self) -> int:
        return self.h.shape[0]

    def F_d(self, x: np.ndarray) -> np.ndarray:
        """Discrete-part constraint matrix at a fixed first stage."""
        x = _arr(x).reshape(-1)
        out = self.F_d0.copy()
        for k, xk in enumerate(x):
            if xk != 0.0:
                out += xk * self.F_d_lin[k]
        return out

    def u_d_in_box(self, u_d: np.ndarray, tol: float = 1e-6) -> bool:
        u_d = _arr(u_d).reshape(-1)
        if self.m_u == 0:
            return True
        ok = (u_d >= self.u_d_bounds[:, 0] - tol).all()
        ok &= (u_d <= self.u_d_bounds[:, 1] + tol).all()
        ok &= np.abs(u_d - np.round(u_d)).max(initial=0.0) <= tol
        if self.pure_C.shape[0]:
            ok &= (self.pure_C @ u_d <= self.pure_rhs + tol).all()
        return bool(ok)

    def enumerate_u_d(self, budget: int = 1_000_000) -> Iterator[np.ndarray]:
        """All integer points of the box passing the pure-u_d rows."""
        if self.m_u == 0:
            yield np.zeros(0)
            return
        ranges = [range(int(math.ceil(lo)), int(math.floor(hi)) + 1)
                  for lo, hi in self.u_d_bounds]
        total = int(np.prod([len(r) for r in ranges], dtype=float))
        if total > budget:
            raise ValueError(f"discrete uncertainty box too large ({total})")
        for pt in product(*ranges):
            u_d = np.array(pt, dtype=float)
            if (not self.pure_C.shape[0]
                    or (self.pure_C @ u_d <= self.pure_rhs + 1e-9).all()):
                yield u_d


@dataclass
class RecourseSpec:
    """Y(x,u) = {(y_c, y_d): B2c y_c + B2d y_d >= d - B1 x - E_c u_c - E_d u_d,
    y_c >= 0, y_d integer in a finite box}; m_y = 0 means LP recourse."""

    n_y: int
    m_y: int
    B1: np.ndarray
    B2c: np.ndarray
    B2d: np.ndarray
    E_c: np.ndarray
    E_d: np.ndarray
    d: np.ndarray
    c2c: np.ndarray
    c2d: np.ndarray
    y_d_bounds: np.ndarray

    def __post_init__(self):
        self.d = _arr(self.d).reshape(-1)
        mu = self.d.shape[0]
        self.B1 = _shaped(self.B1, mu, -1)
        self.B2c = _shaped(self.B2c, mu, self.n_y)
        self.B2d = _shaped(self.B2d, mu, self.m_y)
        self.E_c = _shaped(self.E_c, mu, -1)
        self.E_d = _shaped(self.E_d, mu, -1)
        self.c2c = _arr(self.c2c).reshape(self.n_y)
        self.c2d = _arr(self.c2d).reshape(self.m_y)
        self.y_d_bounds = _shaped(self.y_d_bounds, self.m_y, 2)

    @property
    def mu_y(self) -> int:
        return self.d.shape[0]

    def rhs(self, x: np.ndarray, u_c: np.ndarray,
            u_d: np.ndarray) -> np.ndarray:
        """Right-hand side d - B1 x - E_c u_c - E_d u_d at fixed data."""
        out = self.d - self.B1 @ _arr(x).reshape(-1)
        if self.E_c.shape[1]:
            out = out - self.E_c @ _arr(u_c).reshape(-1)
        if self.E_d.shape[1]:
            out = out - self.E_d @ _arr(u_d).reshape(-1)
        return out

    def enumerate_y_d(self, budget: int = 1_000_000) -> Iterator[np.ndarray]:
        if self.m_y == 0:
            yield np.zeros(0)
            return
        ranges = [range(int(math.ceil(lo)), int(math.floor(hi)) + 1)
                  for lo, hi in self.y_d_bounds]
        total = int(np.prod([len(r) for r in ranges], dtype=float))
        if total > budget:
            raise ValueError(f"discrete recourse box too large ({total})")
        for pt in product(*ranges):
            yield np.array(pt, dtype=float)


@dataclass
class Scenario:
    """One uncertainty realization u = (u_c, u_d)."""

    u_c: np.ndarray
    u_d: np.ndarray

    def __post_init__(self):
        self.u_c = _arr(self.u_c).reshape(-1)
        self.u_d = _arr(self.u_d).reshape(-1)

    def to_dict(self) -> dict:
        return {"u_c": self.u_c.tolist(), "u_d": self.u_d.tolist()}


@dataclass
class ProblemInstance:
    first_stage: FirstStageSet
    ddu: DduSet
    recourse: RecourseSpec
    c1: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.c1 = _arr(self.c1).reshape(-1)

    @property
    def n_first(self) -> int:
        return self.first_stage.n


# ---------------------------------------------------------------------------
# validation / membership
# ---------------------------------------------------------------------------

def validate(instance: ProblemInstance) -> list:
    """Structural checks; an empty list means the instance is accepted."""
    fs, ddu, rc = instance.first_stage, instance.ddu, instance.recourse
    n = fs.n
    issues = []
    if fs.A.shape[1] != n:
        issues.append("column mismatch: first_stage.A")
    if fs.A.shape[0] != fs.b.shape[0]:
        issues.append("row mismatch: first_stage")
    if fs.m_x and not np.isfinite(fs.integer_bounds).all():
        issues.append("A2: unbounded first-stage integer variable")
    mu_u = ddu.mu_u
    if ddu.F_c.shape != (mu_u, ddu.n_u):
        issues.append("row mismatch: ddu")
    if ddu.F_d0.shape != (mu_u, ddu.m_u):
        issues.append("row mismatch: ddu")
    if ddu.F_d_lin.shape != (n, mu_u, ddu.m_u):
        issues.append("shape mismatch: ddu.F_d_lin")
    if ddu.G.shape != (mu_u, n):
        issues.append("shape mismatch: ddu.G")
    if ddu.m_u and not np.isfinite(ddu.u_d_bounds).all():
        issues.append("A2: unbounded uncertainty")
    mu_y = rc.mu_y
    for name, mat, cols in (("B1", rc.B1, n), ("B2c", rc.B2c, rc.n_y),
                            ("B2d", rc.B2d, rc.m_y), ("E_c", rc.E_c, ddu.n_u),
                            ("E_d", rc.E_d, ddu.m_u)):
        if mat.shape != (mu_y, cols):
            issues.append(f"shape mismatch: recourse.{name}")
    if rc.m_y and not np.isfinite(rc.y_d_bounds).all():
        issues.append("unbounded discrete recourse variable")
    if instance.c1.shape[0] != n:
        issues.append("shape mismatch: c1")
    if n == 0 and rc.n_y + rc.m_y == 0:
        issues.append("empty objective: no decision variables")
    return issues


def scenario_membership(instance: ProblemInstance, x: np.ndarray, s: Scenario,
                        tol: float = 1e-6) -> bool:
    """True iff s lies in U(x) within tolerance."""
    ddu = instance.ddu
    if s.u_c.shape[0] != ddu.n_u or s.u_d.shape[0] != ddu.m_u:
        raise ValueError("scenario dimension mismatch")
    if (s.u_c < -tol).any():
        return False
    if not ddu.u_d_in_box(s.u_d, tol):
        return False
    x = _arr(x).reshape(-1)
    lhs = ddu.F_c @ s.u_c + ddu.F_d(x) @ s.u_d
    return bool((lhs <= ddu.h + ddu.G @ x + tol).all())


# ---------------------------------------------------------------------------
# shared model-building pieces
# ---------------------------------------------------------------------------

def add_first_stage(m: Model, instance: ProblemInstance,
                    prefix: str = "x") -> list:
    """First-stage variables and A x >= b rows; returns the x names."""
    fs = instance.first_stage
    xs = m.add_vars(f"{prefix}c", fs.n_x)
    xs += m.add_box_vars(f"{prefix}d", fs.integer_bounds, integer=True)
    if fs.A.shape[0]:
        m.add_constrs(f"{prefix}_X", mat_vec(fs.A, xs), ">=", fs.b)
    return xs


def u_membership_exprs(instance: ProblemInstance, x_expr, u_c_expr,
                       u_d_expr) -> list:
    """Row expressions F_c u_c + F_d(x) u_d - h - G x (each row <= 0 in U(x)).

    x may be numeric or symbolic; with symbolic x, u_d must be numeric so the
    decision-dependent term F_d(x) u_d stays affine.
    """
    ddu = instance.ddu
    lhs = mat_vec(ddu.F_c, u_c_expr)
    u_d_num = all(not isinstance(e, (str, Lin)) for e in u_d_expr)
    x_num = all(not isinstance(e, (str, Lin)) for e in x_expr)
    if u_d_num:
        u_d = np.array([float(v) for v in u_d_expr])
        fd0_part = ddu.F_d0 @ u_d if ddu.m_u else np.zeros(ddu.mu_u)
        lin_cols = np.array([fl @ u_d for fl in ddu.F_d_lin]).T \
            if ddu.m_u and len(x_expr) else np.zeros((ddu.mu_u, len(x_expr)))
        fd_part = [fd0_part[i] + dot(lin_cols[i], x_expr)
                   for i in range(ddu.mu_u)]
    elif x_num:
        fd = ddu.F_d(np.array([float(v) for v in x_expr]))
        fd_part = mat_vec(fd, u_d_expr)
    else:
        raise ValueError("F_d(x) u_d needs numeric x or numeric u_d")
    gx = mat_vec(ddu.G, x_expr)
    return [lhs[i] + fd_part[i] - ddu.h[i] - gx[i] for i in range(ddu.mu_u)]


def add_scenario_vars(m: Model, instance: ProblemInstance, x_expr,
                      prefix: str = "u") -> tuple:
    """Scenario decision variables with full U(x) membership (x numeric)."""
    ddu = instance.ddu
    u_c = m.add_vars(f"{prefix}c", ddu.n_u)
    u_d = m.add_box_vars(f"{prefix}d", ddu.u_d_bounds, integer=True)
    rows = u_membership_exprs(instance, x_expr, u_c, u_d)
    m.add_constrs(f"{prefix}_U", rows, "<=", np.zeros(len(rows)))
    if ddu.pure_C.shape[0]:
        m.add_constrs(f"{prefix}_Upure", mat_vec(ddu.pure_C, u_d), "<=",
                      ddu.pure_rhs)
    return u_c, u_d


def recourse_row_exprs(instance: ProblemInstance, x_expr, u_c_expr, u_d_expr,
                       y_c_expr, y_d_expr) -> list:
    """B2c y_c + B2d y_d + B1 x + E_c u_c + E_d u_d - d (each row >= 0)."""
    rc = instance.recourse
    rows = mat_vec(rc.B2c, y_c_expr)
    parts = [(rc.B2d, y_d_expr), (rc.B1, x_expr), (rc.E_c, u_c_expr),
             (rc.E_d, u_d_expr)]
    for mat, expr in parts:
        if mat.shape[1]:
            extra = mat_vec(mat, expr)
            rows = [r + e for r, e in zip(rows, extra)]
    return [r - di for r, di in zip(rows, rc.d)]


# ---------------------------------------------------------------------------
# monolithic relaxation bound w_R
# ---------------------------------------------------------------------------

@dataclass
class BoundResult:
    status: str           # optimal | infeasible | unbounded
    value: Optional[float]
    x: Optional[np.ndarray] = None
    scenario: Optional[Scenario] = None


def _linearized_fd_products(m: Model, instance: ProblemInstance, xs, u_d):
    """Expressions z[k][j] = x_k * u_dj for the pairs with nonzero F_d_lin.

    Exact for finitely boxed integer variables on both sides (bit expansion
    of u_dj; envelope rows per bit).  Continuous first-stage coordinates with
    nonzero F_d_lin are rejected: the monolithic relaxation would be bilinear.
    """
    fs, ddu = instance.first_stage, instance.ddu
    need = {}
    for k in range(fs.n):
        for j in range(ddu.m_u):
            if np.any(instance.ddu.F_d_lin[k][:, j] != 0.0):
                if k < fs.n_x:
                    raise ValueError(
                        "relaxation bound unsupported: decision-dependent "
                        "coefficient on a continuous first-stage variable")
                need.setdefault(j, set()).add(k)
    bits = {}
    for j, ks in sorted(need.items()):
        lo, hi = ddu.u_d_bounds[j]
        span = int(round(hi - lo))
        nb = max(1, span.bit_length())
        bvars = m.add_vars(f"wr_bit[{j}]", nb, binary=True)
        m.add_constr(f"wr_bits[{j}]",
                     dot([2.0 ** p for p in range(nb)], bvars)
                     - Lin.var(u_d[j]), "==", -lo)
        bits[j] = bvars
    z = {}
    for j, ks in sorted(need.items()):
        lo_j = ddu.u_d_bounds[j][0]
        for k in sorted(ks):
            lx, ux = fs.integer_bounds[k - fs.n_x]
            expr = lo_j * Lin.var(xs[k])
            for p, bv in enumerate(bits[j]):
                w = m.add_var(f"wr_z[{k},{j},{p}]", lb=min(0.0, lx), ub=ux)
                m.add_constr(f"wr_mc1[{k},{j},{p}]",
                             Lin.var(w) - ux * Lin.var(bv), "<=", 0.0)
                m.add_constr(f"wr_mc2[{k},{j},{p}]",
                             Lin.var(w) - lx * Lin.var(bv), ">=", 0.0)
                m.add_constr(f"wr_mc3[{k},{j},{p}]",
                             Lin.var(w) - Lin.var(xs[k]) - ux * Lin.var(bv),
                             ">=", -ux)
                m.add_constr(f"wr_mc4[{k},{j},{p}]",
                             Lin.var(w) - Lin.var(xs[k]) - lx * Lin.var(bv),
                             "<=", -lx)
                expr = expr + (2.0 ** p) * Lin.var(w)
            z[(k, j)] = expr
    return z


def relaxation_bound_wR(instance: ProblemInstance,
                        time_limit: Optional[float] = None) -> BoundResult:
    """Optimal value of min{c1 x + c2 y : x in X, u in U(x), y in Y(x,u)}.

    A lower bound on w*; infeasibility here proves the full problem
    infeasible, unboundedness violates the finite-relaxation assumption.
    """
    fs, ddu, rc = instance.first_stage, instance.ddu, instance.recourse
    m = Model("relaxation")
    xs = add_first_stage(m, instance)
    u_c = m.add_vars("uc", ddu.n_u)
    u_d = m.add_box_vars("ud", ddu.u_d_bounds, integer=True)
    if ddu.pure_C.shape[0]:
        m.add_constrs("u_pure", mat_vec(ddu.pure_C, u_d), "<=", ddu.pure_rhs)
    # U(x) rows with both x and u_d as decisions: expand F_d(x) u_d through
    # exact product linearization.
    z = _linearized_fd_products(m, instance, xs, u_d)
    rows = mat_vec(ddu.F_c, u_c)
    rows = [r + e for r, e in zip(rows, mat_vec(ddu.F_d0, u_d))]
    for (k, j), expr in z.items():
        for i in range(ddu.mu_u):
            coef = ddu.F_d_lin[k][i, j]
            if coef != 0.0:
                rows[i] = rows[i] + coef * expr
    gx = mat_vec(ddu.G, xs)
    m.add_constrs("u_U", [rows[i] - gx[i] for i in range(ddu.mu_u)], "<=",
                  ddu.h)
    y_c = m.add_vars("yc", rc.n_y)
    y_d = m.add_box_vars("yd", rc.y_d_bounds, integer=True)
    m.add_constrs("rec", recourse_row_exprs(instance, xs, u_c, u_d, y_c, y_d),
                  ">=", np.zeros(rc.mu_y))
    m.set_objective(dot(instance.c1, xs) + dot(rc.c2c, y_c)
                    + dot(rc.c2d, y_d))
    out = m.solve(time_limit=time_limit)
    if out.status != "optimal":
        return BoundResult(out.status, None)
    return BoundResult("optimal", out.objective, out.values(xs),
                       Scenario(out.values(u_c), out.values(u_d)))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def instance_to_dict(instance: ProblemInstance) -> dict:
    fs, ddu, rc = instance.first_stage, instance.ddu, instance.recourse
    return {
        "first_stage": {
            "n_x": fs.n_x, "m_x": fs.m_x, "A": fs.A.tolist(),
            "b": fs.b.tolist(), "integer_bounds": fs.integer_bounds.tolist(),
        },
        "ddu": {
            "n_u": ddu.n_u, "m_u": ddu.m_u, "F_c": ddu.F_c.tolist(),
            "F_d0": ddu.F_d0.tolist(),
            "F_d_lin": ddu.F_d_lin.tolist(), "G": ddu.G.tolist(),
            "h": ddu.h.tolist(), "u_d_bounds": ddu.u_d_bounds.tolist(),
            "pure_C": ddu.pure_C.tolist(), "pure_rhs": ddu.pure_rhs.tolist(),
        },
        "recourse": {
            "n_y": rc.n_y, "m_y": rc.m_y, "B1": rc.B1.tolist(),
            "B2c": rc.B2c.tolist(), "B2d": rc.B2d.tolist(),
            "E_c": rc.E_c.tolist(), "E_d": rc.E_d.tolist(),
            "d": rc.d.tolist(), "c2c": rc.c2c.tolist(),
            "c2d": rc.c2d.tolist(), "y_d_bounds": rc.y_d_bounds.tolist(),
        },
        "c1": instance.c1.tolist(),
        "meta": dict(instance.meta),
    }


def instance_from_dict(data: dict) -> ProblemInstance:
    fsd, dd, rcd = data["first_stage"], data["ddu"], data["recourse"]
    fs = FirstStageSet(fsd["n_x"], fsd["m_x"], fsd["A"], fsd["b"],
                       fsd["integer_bounds"])
    ddu = DduSet(dd["n_u"], dd["m_u"], dd["F_c"], dd["F_d0"], dd["F_d_lin"],
                 dd["G"], dd["h"], dd["u_d_bounds"],
                 pure_C=dd.get("pure_C"), pure_rhs=dd.get("pure_rhs"))
    rc = RecourseSpec(rcd["n_y"], rcd["m_y"], rcd["B1"], rcd["B2c"],
                      rcd["B2d"], rcd["E_c"], rcd["E_d"], rcd["d"],
                      rcd["c2c"], rcd["c2d"], rcd["y_d_bounds"])
    return ProblemInstance(fs, ddu, rc, data["c1"], data.get("meta", {}))


def save_instance(instance: ProblemInstance, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_dict(instance), fh, indent=1)


def load_instance(path: str) -> ProblemInstance:
    with open(path) as fh:
        return instance_from_dict(json.load(fh))
