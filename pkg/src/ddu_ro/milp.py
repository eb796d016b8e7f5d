"""Incremental MILP/LP modeling layer on top of scipy's HiGHS interface.

Provides a mutable model handle (named variables and constraints, affine
expressions), deterministic solves with status/dual extraction, and the
normalized-cone extreme-ray routine used for recourse infeasibility
certificates.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, linprog
from scipy.optimize import milp as _scipy_milp

INF = float("inf")

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
LIMIT = "limit"


class BackendError(RuntimeError):
    """Solver-library failure distinct from a legitimate infeasible status."""


class RayUnavailableError(ValueError):
    """Ray requested for a system that is actually feasible."""


@dataclass
class BigMConfig:
    """Big-M constants, optionally distinct per use-site tag."""

    default: float = 1e4
    scopes: dict = field(default_factory=dict)

    def value(self, scope: Optional[str] = None) -> float:
        m = self.scopes.get(scope, self.default)
        if not (m > 0 and np.isfinite(m)):
            raise ValueError(f"big-M must be positive and finite, got {m}")
        return float(m)


class Lin:
    """Sparse affine expression: sum of coef*var plus a constant."""

    __slots__ = ("terms", "const")

    def __init__(self, terms: Optional[dict] = None, const: float = 0.0):
        self.terms = terms if terms is not None else {}
        self.const = float(const)

    @classmethod
    def var(cls, name: str, coef: float = 1.0) -> "Lin":
        return cls({name: float(coef)})

    def copy(self) -> "Lin":
        return Lin(dict(self.terms), self.const)

    def _iadd(self, other, sign: float) -> "Lin":
        other = as_lin(other)
        for k, v in other.terms.items():
            self.terms[k] = self.terms.get(k, 0.0) + sign * v
        self.const += sign * other.const
        return self

    def __add__(self, other) -> "Lin":
        return self.copy()._iadd(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other) -> "Lin":
        return self.copy()._iadd(other, -1.0)

    def __rsub__(self, other) -> "Lin":
        out = self.copy()
        out.terms = {k: -v for k, v in out.terms.items()}
        out.const = -out.const
        return out._iadd(other, 1.0)

    def __mul__(self, scalar) -> "Lin":
        s = float(scalar)
        return Lin({k: s * v for k, v in self.terms.items()}, s * self.const)

    __rmul__ = __mul__

    def __neg__(self) -> "Lin":
        return self * -1.0


LinLike = Union[Lin, str, float, int]


def as_lin(v: LinLike) -> Lin:
    if isinstance(v, Lin):
        return v
    if isinstance(v, str):
        return Lin.var(v)
    return Lin(const=float(v))


def dot(coefs: Sequence[float], items: Sequence[LinLike]) -> Lin:
    """Inner product of a numeric vector with variables/expressions."""
    out = Lin()
    for c, it in zip(coefs, items):
        c = float(c)
        if c == 0.0:
            continue
        out._iadd(as_lin(it) * c, 1.0)
    return out


def mat_vec(matrix: np.ndarray, items: Sequence[LinLike]) -> list:
    """Matrix-vector product where the vector holds variables/expressions."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.size == 0:
        return [Lin() for _ in range(matrix.shape[0])]
    return [dot(row, items) for row in matrix]


@dataclass
class SolveOutcome:
    status: str
    objective: Optional[float]
    primal: dict
    dual: dict
    wall_time: float
    # best proven bound on the optimum (lower for min, upper for max);
    # equals the objective when solved to optimality, and remains valid
    # for truncated integer solves
    bound: Optional[float] = None

    def values(self, names: Iterable[str]) -> np.ndarray:
        return np.array([self.primal[n] for n in names], dtype=float)


@dataclass
class _Var:
    name: str
    lb: float
    ub: float
    integer: bool


_SENSES = ("<=", ">=", "==")


class Model:
    """Mutable optimization model; rebuilt into scipy arrays at solve time."""

    def __init__(self, name: str = "model", sense: str = "min"):
        if sense not in ("min", "max"):
            raise ValueError(f"bad objective sense {sense!r}")
        self.name = name
        self.sense = sense
        self._vars: dict = {}
        self._constrs: dict = {}
        self._objective = Lin()

    # -- construction -----------------------------------------------------
    def add_var(self, name: str, lb: float = 0.0, ub: float = INF,
                integer: bool = False, binary: bool = False) -> str:
        if name in self._vars:
            raise ValueError(f"duplicate variable {name!r}")
        if binary:
            lb, ub, integer = 0.0, 1.0, True
        self._vars[name] = _Var(name, float(lb), float(ub), integer)
        return name

    def add_vars(self, prefix: str, n: int, lb: float = 0.0, ub: float = INF,
                 integer: bool = False, binary: bool = False) -> list:
        return [self.add_var(f"{prefix}[{i}]", lb, ub, integer, binary)
                for i in range(n)]

    def add_box_vars(self, prefix: str, bounds: np.ndarray,
                     integer: bool = True) -> list:
        """One variable per row of an (n, 2) lower/upper bound array."""
        bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
        return [self.add_var(f"{prefix}[{i}]", lo, hi, integer=integer)
                for i, (lo, hi) in enumerate(bounds)]

    def add_constr(self, name: str, expr: LinLike, sense: str,
                   rhs: float = 0.0) -> str:
        if name in self._constrs:
            raise ValueError(f"duplicate constraint {name!r}")
        if sense not in _SENSES:
            raise ValueError(f"bad constraint sense {sense!r}")
        expr = as_lin(expr)
        unknown = [v for v in expr.terms if v not in self._vars]
        if unknown:
            raise ValueError(f"constraint {name!r} references unknown {unknown}")
        self._constrs[name] = (expr, sense, float(rhs))
        return name

    def add_constrs(self, prefix: str, exprs: Sequence[LinLike], sense: str,
                    rhs: Sequence[float]) -> list:
        return [self.add_constr(f"{prefix}[{i}]", e, sense, r)
                for i, (e, r) in enumerate(zip(exprs, rhs))]

    def remove_constr(self, name: str) -> None:
        del self._constrs[name]

    def set_objective(self, expr: LinLike) -> None:
        self._objective = as_lin(expr)

    @property
    def var_names(self) -> list:
        return list(self._vars)

    @property
    def num_integer(self) -> int:
        return sum(1 for v in self._vars.values() if v.integer)

    # -- solving -----------------------------------------------------------
    def _arrays(self):
        names = list(self._vars)
        idx = {n: i for i, n in enumerate(names)}
        n = len(names)
        sign = 1.0 if self.sense == "min" else -1.0
        c = np.zeros(n)
        for v, coef in self._objective.terms.items():
            c[idx[v]] = sign * coef
        lb = np.array([self._vars[v].lb for v in names])
        ub = np.array([self._vars[v].ub for v in names])
        integrality = np.array(
            [1 if self._vars[v].integer else 0 for v in names])
        rows, cols, vals = [], [], []
        row_lo, row_hi, row_names = [], [], []
        for i, (cname, (expr, sense, rhs)) in enumerate(self._constrs.items()):
            for v, coef in expr.terms.items():
                if coef != 0.0:
                    rows.append(i)
                    cols.append(idx[v])
                    vals.append(coef)
            eff = rhs - expr.const
            row_lo.append(eff if sense in (">=", "==") else -INF)
            row_hi.append(eff if sense in ("<=", "==") else INF)
            row_names.append(cname)
        a = sparse.coo_matrix((vals, (rows, cols)),
                              shape=(len(self._constrs), n))
        return (names, c, lb, ub, integrality, a.tocsr(),
                np.array(row_lo), np.array(row_hi), row_names)

    def solve(self, time_limit: Optional[float] = None,
              mip_gap: Optional[float] = None,
              feas_tol: Optional[float] = None) -> SolveOutcome:
        t0 = time.perf_counter()
        if not self._vars:
            ok = all(
                (sense != "<=" or expr.const <= rhs + 1e-9)
                and (sense != ">=" or expr.const >= rhs - 1e-9)
                and (sense != "==" or abs(expr.const - rhs) <= 1e-9)
                for expr, sense, rhs in self._constrs.values())
            status = OPTIMAL if ok else INFEASIBLE
            obj = self._objective.const if ok else None
            return SolveOutcome(status, obj, {}, {},
                                time.perf_counter() - t0)
        if self.num_integer:
            out = self._solve_mip(time_limit, mip_gap, feas_tol=feas_tol)
        else:
            out = self._solve_lp(time_limit)
        out.wall_time = time.perf_counter() - t0
        return out

    def _solve_mip(self, time_limit, mip_gap, _zero_obj=False,
                   feas_tol=None) -> SolveOutcome:
        (names, c, lb, ub, integrality, a, row_lo, row_hi,
         _row_names) = self._arrays()
        if _zero_obj:
            c = np.zeros_like(c)
        options = {}
        if time_limit is not None:
            options["time_limit"] = float(time_limit)
        if mip_gap is not None:
            options["mip_rel_gap"] = float(mip_gap)
        if np.any(integrality):
            # keep binary big-M switches from leaking slack: a binary
            # accepted at delta = 1e-6 admits M * 1e-6 of violation in
            # every row it gates, which cutting-set blocks can exploit
            options["mip_feasibility_tolerance"] = (
                 1e-7 if feas_tol is None else float(feas_tol))
        kwargs = dict(c=c, integrality=integrality, bounds=Bounds(lb, ub),
                      options=options)
        if a.shape[0]:
            kwargs["constraints"] = LinearConstraint(a, row_lo, row_hi)
        with warnings.catch_warnings():
            warnings.filterwarnings("ignore", message="Unrecognized options",
                                    category=RuntimeWarning)
            res = _scipy_milp(**kwargs)
        sign = 1.0 if self.sense == "min" else -1.0
        db = getattr(res, "mip_dual_bound", None)
        bound = (sign * float(db) + self._objective.const
                 if db is not None and np.isfinite(db) else None)
        if res.status == 0:
            obj = sign * float(res.fun) + self._objective.const
            return SolveOutcome(OPTIMAL, obj, dict(zip(names, res.x)), {},
                                0.0, bound=obj if bound is None else bound)
        if res.status == 1:
            primal = dict(zip(names, res.x)) if res.x is not None else {}
            obj = (sign * float(res.fun) + self._objective.const
                   if res.x is not None else None)
            return SolveOutcome(LIMIT, obj, primal, {}, 0.0, bound=bound)
        if res.status == 2:
            return SolveOutcome(INFEASIBLE, None, {}, {}, 0.0)
        if res.status == 3:
            return SolveOutcome(UNBOUNDED, None, {}, {}, 0.0)
        if res.status == 4 and not _zero_obj:
            # HiGHS could not tell infeasible from unbounded; probe feasibility.
            probe = self._solve_mip(time_limit, mip_gap, _zero_obj=True)
            if probe.status == OPTIMAL:
                return SolveOutcome(UNBOUNDED, None, {}, {}, 0.0)
            if probe.status == INFEASIBLE:
                return SolveOutcome(INFEASIBLE, None, {}, {}, 0.0)
        raise BackendError(f"{self.name}: solver failure: {res.message}")

    def _solve_lp(self, time_limit) -> SolveOutcome:
        (names, c, lb, ub, _integrality, a, row_lo, row_hi,
         row_names) = self._arrays()
        # Split two-sided rows into <= / == for linprog.
        a = a.tocsr()
        ub_rows, eq_rows = [], []  # (matrix row slice index, sign)
        for i in range(a.shape[0]):
            lo, hi = row_lo[i], row_hi[i]
            if lo == hi:
                eq_rows.append(i)
            elif np.isfinite(hi):
                ub_rows.append((i, 1.0, hi))
            else:
                ub_rows.append((i, -1.0, -lo))
        kwargs = dict(c=c, bounds=np.column_stack([lb, ub]), method="highs")
        if time_limit is not None:
            kwargs["options"] = {"time_limit": float(time_limit)}
        if ub_rows:
            sel = sparse.vstack([a.getrow(i) * s for i, s, _ in ub_rows])
            kwargs["A_ub"] = sel
            kwargs["b_ub"] = np.array([b for _, _, b in ub_rows])
        if eq_rows:
            kwargs["A_eq"] = sparse.vstack([a.getrow(i) for i in eq_rows])
            kwargs["b_eq"] = row_lo[eq_rows]
        res = linprog(**kwargs)
        if res.status == 2:
            return SolveOutcome(INFEASIBLE, None, {}, {}, 0.0)
        if res.status == 3:
            return SolveOutcome(UNBOUNDED, None, {}, {}, 0.0)
        if res.status == 1:
            return SolveOutcome(LIMIT, None, {}, {}, 0.0)
        if res.status != 0:
            raise BackendError(f"{self.name}: solver failure: {res.message}")
        sign = 1.0 if self.sense == "min" else -1.0
        obj = sign * float(res.fun) + self._objective.const
        # Duals reported as d(objective)/d(rhs) in the model's own sense.
        dual = {}
        for k, (i, s, _b) in enumerate(ub_rows):
            dual[row_names[i]] = sign * s * float(res.ineqlin.marginals[k])
        for k, i in enumerate(eq_rows):
            dual[row_names[i]] = sign * float(res.eqlin.marginals[k])
        return SolveOutcome(OPTIMAL, obj, dict(zip(names, res.x)), dual, 0.0)


def solve_mip(model: Model, time_limit: Optional[float] = None,
              mip_gap: Optional[float] = None) -> SolveOutcome:
    return model.solve(time_limit=time_limit, mip_gap=mip_gap)


def solve_bounded_below(model: Model, ub: Optional[float],
                        time_limit: Optional[float] = None,
                        tol: float = 1e-6) -> SolveOutcome:
    """Solve a minimizing MILP whose optimum is a valid lower bound.

    Big-M models are tolerance-fragile: depending on the integrality
    tolerance HiGHS can either leak slack through binary switches (too
    loose) or prune genuinely feasible nodes (too tight).  Over-pruning
    inflates a minimizing objective, which would poison a cutting-plane
    lower bound, so the model is solved at two tolerances and the lower
    optimal value kept; two settings rarely over-prune the same model.
    When a certified upper bound is supplied and both solves still exceed
    it, a further ladder of tolerances is tried.
    """
    if not model.num_integer:
        return model.solve(time_limit=time_limit)
    best = None
    for ft in (1e-7, 1e-9):
        out = model.solve(time_limit=time_limit, feas_tol=ft)
        if out.status == OPTIMAL and (best is None or best.status != OPTIMAL
                                      or out.objective < best.objective):
            best = out
        elif best is None:
            best = out
    if (ub is not None and np.isfinite(ub) and best.status == OPTIMAL
            and best.objective > ub + tol * max(1.0, abs(ub))):
        cap = ub + tol * max(1.0, abs(ub))
        for ft in (5e-8, 2e-7, 1e-8):
            alt = model.solve(time_limit=time_limit, feas_tol=ft)
            if alt.status == OPTIMAL and alt.objective < best.objective:
                best = alt
                if alt.objective <= cap:
                    break
    return best


def solve_lp_with_duals(model: Model,
                        time_limit: Optional[float] = None) -> SolveOutcome:
    if model.num_integer:
        raise ValueError("dual extraction requires a pure LP")
    return model.solve(time_limit=time_limit)


def extreme_ray_of_Pi(recourse, rhs_residual: np.ndarray,
                      tol: float = 1e-6) -> np.ndarray:
    """Normalized recession direction of the recourse dual with positive
    residual payoff, certifying infeasibility of the recourse system.

    Maximizes residual'gamma over {B2c' gamma <= 0, 1' gamma <= 1, gamma >= 0};
    any solution with positive value scales to an unbounded dual direction.
    """
    residual = np.asarray(rhs_residual, dtype=float)
    mu_y = residual.shape[0]
    m = Model("ray", sense="max")
    g = m.add_vars("gamma", mu_y)
    m.set_objective(dot(residual, g))
    b2c_t = np.asarray(recourse.B2c, dtype=float).T
    m.add_constrs("cone", mat_vec(b2c_t, g), "<=", np.zeros(b2c_t.shape[0]))
    m.add_constr("norm", dot(np.ones(mu_y), g), "<=", 1.0)
    out = m.solve()
    if out.status != OPTIMAL:
        raise BackendError(f"ray LP ended with status {out.status}")
    if out.objective <= tol:
        raise RayUnavailableError(
            "ray requested for feasible system "
            f"(max residual payoff {out.objective:.3e} <= tol)")
    return out.values(g)
