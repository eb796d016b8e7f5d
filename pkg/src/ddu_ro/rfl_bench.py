"""Robust facility-location benchmark generator and table experiments.

Clients sit on a square; opening a facility at site j (binary, cost f_j)
buys service capacity x_c_j (unit cost a_j) bounded by fractions of the
neighborhood demand.  Realized demand is nominal plus an induced part tied
to open neighboring facilities, with two rival interval estimates per
(client, facility) pair:

* ddu = "C" — the safe polytope hull: componentwise min of the lower
  estimates to max of the upper ones;
* ddu = "I" — the mixed-integer set: per client a binary pick of exactly one
  estimate, with a cardinality cap on how often each estimate is used.

Both carry the budget row (total induced demand <= alpha * total capacity).
Variants: "L" ships demand with continuous flows only (LP recourse); "I"
may also open temporary facilities in the second stage (binary recourse).

run_table_experiment sweeps the estimate-divergence factor r and the
cardinality cap k2, solving each cell with the matching algorithm and
writing CSV/markdown tables plus per-cell bound traces.
"""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .ccg_miu import run_ccg_miu
from .general_ccg import run_approx_miu, run_extended_nested
from .model import ProblemInstance, validate
from .nested_ccg import run_nested
from .report import RunConfig, relative_gap


@dataclass
class RflConfig:
    n_sites: int = 12
    square: float = 100.0          # coordinate range [0, square]^2
    radius: float = 40.0           # neighborhood radius
    demand_range: tuple = (50.0, 300.0)
    f_mult_range: tuple = (0.4, 2.4)   # construction cost multiplier
    a_range: tuple = (0.3, 0.5)        # unit capacity cost
    cap_lo_frac: float = 0.10          # capacity lower fraction of nbhd demand
    cap_hi_frac: float = 1.00
    zeta_lo_frac: float = 0.01         # induced-demand estimate fractions
    zeta_hi_frac: float = 0.03
    r: float = 0.1                     # second estimate = (1+r) * first
    alpha: float = 0.5                 # induced-demand budget coefficient
    rho: float = 1.0                   # second-stage cost weight
    k1: Optional[int] = None           # cardinality cap, estimate 1 (None: n)
    k2: int = 1                        # cardinality cap, estimate 2
    variant: str = "L"                 # L: LP recourse | I: temporary sites
    ddu: str = "C"                     # C: polytope hull | I: mixed-integer
    h_range: tuple = (30.0, 80.0)      # temporary-facility capacities
    f_plus_mult: float = 5.0           # temporary fixed cost = mult * h * max a

    def __post_init__(self):
        if self.n_sites < 2:
            raise ValueError("need at least two sites")
        if self.variant not in ("L", "I") or self.ddu not in ("C", "I"):
            raise ValueError("variant in {L, I}, ddu in {C, I}")
        if self.r < 0:
            raise ValueError("estimate divergence r must be >= 0")
        if (1.0 + self.r) * self.zeta_lo_frac > self.alpha * self.cap_lo_frac:
            raise ValueError(
                "induced-demand lower bounds can outgrow the budget row "
                "(need (1 + r) * zeta_lo_frac <= alpha * cap_lo_frac)")
        for frac in (self.cap_lo_frac, self.cap_hi_frac,
                     self.zeta_lo_frac, self.zeta_hi_frac, self.alpha):
            if not 0 < frac <= 1:
                raise ValueError(f"fraction out of (0, 1]: {frac}")
        k1 = self.n_sites if self.k1 is None else self.k1
        if not (0 <= k1 <= self.n_sites and 0 <= self.k2 <= self.n_sites):
            raise ValueError("cardinality caps must lie in [0, n_sites]")

    def to_dict(self) -> dict:
        return asdict(self)


def _site_data(cfg: RflConfig, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    n = cfg.n_sites
    coords = rng.uniform(0.0, cfg.square, size=(n, 2))
    demand = rng.uniform(*cfg.demand_range, size=n)
    dist = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=2)
    nbrs = dist <= cfg.radius          # (i, j): j in the neighborhood of i
    nbhd_demand = nbrs @ demand        # total demand in each neighborhood
    return {"coords": coords, "demand": demand, "dist": dist, "nbrs": nbrs,
            "nbhd_demand": nbhd_demand,
            "f": nbhd_demand * rng.uniform(*cfg.f_mult_range, size=n),
            "a": rng.uniform(*cfg.a_range, size=n)}


def generate_rfl(cfg: RflConfig, seed: int = 0) -> ProblemInstance:
    """Facility-location instance in the solver schema.

    First stage x = (capacities x_c, site binaries x_d); uncertainty
    u_c = induced demand per client (plus estimate-pick binaries for
    ddu="I"); recourse y = client-facility flows (plus temporary-site
    binaries for variant="I").
    """
    from .model import (DduSet, FirstStageSet, RecourseSpec)

    n = cfg.n_sites
    data = _site_data(cfg, seed)
    demand, nbrs = data["demand"], data["nbrs"]
    cap_lo = cfg.cap_lo_frac * data["nbhd_demand"]
    cap_hi = cfg.cap_hi_frac * data["nbhd_demand"]
    # per-(client, facility) estimate intervals; the second estimate is the
    # first inflated by (1 + r).  Each site's induced demand is split across
    # the clients in its neighborhood so that the summed lower bounds never
    # outgrow the budget row: U(x) stays nonempty for every x in X.
    share = np.where(nbrs, 1.0 / np.maximum(nbrs.sum(axis=0), 1)[None, :],
                     0.0)
    z_lo = cfg.zeta_lo_frac * share * data["nbhd_demand"][None, :]
    z_hi = cfg.zeta_hi_frac * share * data["nbhd_demand"][None, :]
    xi_lo, xi_hi = (1.0 + cfg.r) * z_lo, (1.0 + cfg.r) * z_hi

    # first stage: capacity window opens with the site binary
    n_first = 2 * n
    A = np.zeros((2 * n, n_first))
    for j in range(n):
        A[j, j], A[j, n + j] = 1.0, -cap_lo[j]
        A[n + j, j], A[n + j, n + j] = -1.0, cap_hi[j]
    fs = FirstStageSet(n, n, A, np.zeros(2 * n),
                       np.column_stack([np.zeros(n), np.ones(n)]))

    # uncertainty rows: upper/lower envelope per client plus the budget row
    mu_u = 2 * n + 1
    F_c = np.vstack([np.eye(n), -np.eye(n), np.ones((1, n))])
    G = np.zeros((mu_u, n_first))
    h = np.zeros(mu_u)
    G[2 * n, :n] = cfg.alpha           # budget: sum u~ <= alpha sum x_c
    if cfg.ddu == "C":
        # hull of both estimates: min of lows to max of highs; with r >= 0
        # that is [zeta_lo, (1+r) * zeta_hi] componentwise
        G[:n, n:] = np.maximum(z_hi, xi_hi)
        G[n:2 * n, n:] = -np.minimum(z_lo, xi_lo)
        ddu = DduSet(n, 0, F_c, np.zeros((mu_u, 0)),
                     np.zeros((n_first, mu_u, 0)), G, h, np.zeros((0, 2)))
    else:
        # estimate picks delta: columns [pick1 per client, pick2 per client]
        m_u = 2 * n
        F_d_lin = np.zeros((n_first, mu_u, m_u))
        for j in range(n):
            for i in range(n):
                if not nbrs[i, j]:
                    continue
                F_d_lin[n + j, i, i] = -z_hi[i, j]
                F_d_lin[n + j, i, n + i] = -xi_hi[i, j]
                F_d_lin[n + j, n + i, i] = z_lo[i, j]
                F_d_lin[n + j, n + i, n + i] = xi_lo[i, j]
        pick = np.hstack([np.eye(n), np.eye(n)])
        pure_C = np.vstack([pick, -pick,
                            np.concatenate([np.ones(n), np.zeros(n)])[None],
                            np.concatenate([np.zeros(n), np.ones(n)])[None]])
        k1 = cfg.n_sites if cfg.k1 is None else cfg.k1
        pure_rhs = np.concatenate([np.ones(n), -np.ones(n),
                                   [float(k1), float(cfg.k2)]])
        ddu = DduSet(n, m_u, F_c, np.zeros((mu_u, m_u)), F_d_lin, G, h,
                     np.column_stack([np.zeros(m_u), np.ones(m_u)]),
                     pure_C=pure_C, pure_rhs=pure_rhs)

    # recourse: demand rows then capacity rows; flows y_ij flattened i*n+j
    n_y, mu_y = n * n, 2 * n
    B2c = np.zeros((mu_y, n_y))
    B1 = np.zeros((mu_y, n_first))
    E_c = np.zeros((mu_y, n))
    d = np.concatenate([demand, np.zeros(n)])
    for i in range(n):
        for j in range(n):
            B2c[i, i * n + j] = 1.0          # serve client i
            B2c[n + j, i * n + j] = -1.0     # load facility j
    E_c[:n, :] = -np.eye(n)
    B1[n:, :n] = np.eye(n)
    c2c = cfg.rho * data["dist"].reshape(-1)
    if cfg.variant == "I":
        m_y = n
        dmin, dmax = demand.min(), demand.max()
        span = max(dmax - dmin, 1e-9)
        h_tmp = cfg.h_range[0] + (cfg.h_range[1] - cfg.h_range[0]) \
            * (demand - dmin) / span
        B2d = np.zeros((mu_y, m_y))
        B2d[n:, :] = np.diag(h_tmp)
        c2d = cfg.rho * cfg.f_plus_mult * h_tmp * data["a"].max()
        y_d_bounds = np.column_stack([np.zeros(n), np.ones(n)])
    else:
        m_y = 0
        B2d = np.zeros((mu_y, 0))
        c2d = np.zeros(0)
        y_d_bounds = np.zeros((0, 2))
    rc = RecourseSpec(n_y, m_y, B1, B2c, B2d, E_c,
                      np.zeros((mu_y, ddu.m_u)), d, c2c, c2d, y_d_bounds)
    c1 = np.concatenate([data["a"], data["f"]])
    inst = ProblemInstance(fs, ddu, rc, c1,
                           meta={"benchmark": "rfl", "seed": int(seed),
                                 "config": cfg.to_dict(),
                                 # every x admits the per-client lower
                                 # bounds within the budget row (enforced
                                 # by the config check on zeta_lo/alpha)
                                 "ddu_nonempty": True})
    issues = validate(inst)
    if issues:
        raise ValueError("; ".join(issues))
    return inst


# ---------------------------------------------------------------------------
# table experiments
# ---------------------------------------------------------------------------

_ALGOS = {"miu": run_ccg_miu, "nested": run_nested,
          "extended": run_extended_nested, "approx": run_approx_miu}


def default_algo(variant: str, ddu: str) -> str:
    """Exact algorithm matching each (variant, ddu) cell."""
    return {("L", "C"): "miu", ("L", "I"): "miu",
            ("I", "C"): "nested", ("I", "I"): "extended"}[(variant, ddu)]


def solve_cell(instance: ProblemInstance, algo: str,
               run_cfg: Optional[RunConfig] = None) -> dict:
    """One benchmark cell, normalized to a flat result row."""
    run_cfg = run_cfg or RunConfig(algo=algo)
    t0 = time.perf_counter()
    try:
        rep = _ALGOS[algo](instance, run_cfg)
    except Exception as exc:            # per-cell failures stay in-row
        return {"status": "error", "error": f"{type(exc).__name__}: {exc}",
                "lb": None, "ub": None, "gap": None, "iters": None,
                "inner_iters": None, "time_s": time.perf_counter() - t0,
                "ledger": []}
    inner = None
    extra = getattr(rep, "extra", None) or {}
    if "inner_trace" in extra:
        inner = len(extra["inner_trace"])
    ledger = rep.ledger.records if rep.ledger is not None else []
    return {"status": rep.status,
            "lb": None if not np.isfinite(rep.lb) else float(rep.lb),
            "ub": None if not np.isfinite(rep.ub) else float(rep.ub),
            "gap": relative_gap(rep.lb, rep.ub),
            "iters": rep.iterations, "inner_iters": inner,
            "stop_reason": rep.stop_reason,
            "time_s": time.perf_counter() - t0, "ledger": ledger}


@dataclass
class ResultsTable:
    rows: list = field(default_factory=list)

    COLUMNS = ("variant", "ddu", "algo", "r", "k2", "status", "lb", "ub",
               "gap", "iters", "inner_iters", "time_s")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.COLUMNS,
                           extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow(row)
        return buf.getvalue()

    def to_markdown(self) -> str:
        head = "| " + " | ".join(self.COLUMNS) + " |"
        sep = "|" + "---|" * len(self.COLUMNS)
        body = []
        for row in self.rows:
            cells = []
            for c in self.COLUMNS:
                v = row.get(c)
                if isinstance(v, float):
                    v = f"{v:.4g}"
                cells.append(str(v))
            body.append("| " + " | ".join(cells) + " |")
        return "\n".join([head, sep] + body)

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        (out / "trace").mkdir(parents=True, exist_ok=True)
        (out / "results.csv").write_text(self.to_csv())
        (out / "results.md").write_text(self.to_markdown() + "\n")
        for row in self.rows:
            tag = f"{row['variant']}_{row['ddu']}_r{row['r']}_k{row['k2']}"
            lines = [json.dumps(rec) for rec in row.get("ledger", [])]
            (out / "trace" / f"{tag}.jsonl").write_text("\n".join(lines)
                                                        + "\n")


def run_table_experiment(variant: str, algo: Optional[str] = None,
                         r_grid=(0.1, 0.2, 0.3, 0.4, 0.5),
                         k2_grid=(1, 2, 3, 4, 5),
                         config: Optional[RflConfig] = None,
                         seed: int = 0,
                         run_cfg: Optional[RunConfig] = None,
                         out_dir=None) -> ResultsTable:
    """Sweep r (hull cells, one per r) and (r, k2) (mixed-integer cells),
    solving each with the matching algorithm unless one is forced."""
    base = config or RflConfig(variant=variant)
    table = ResultsTable()
    for r in r_grid:
        for ddu, k2s in (("C", (None,)), ("I", k2_grid)):
            for k2 in k2s:
                cfg = RflConfig(**{**base.to_dict(), "variant": variant,
                                   "ddu": ddu, "r": float(r),
                                   "k2": int(k2 or 1)})
                inst = generate_rfl(cfg, seed)
                use = algo or default_algo(variant, ddu)
                row = solve_cell(inst, use, run_cfg)
                row.update({"variant": variant, "ddu": ddu, "algo": use,
                            "r": float(r), "k2": None if k2 is None
                            else int(k2)})
                table.rows.append(row)
    if out_dir is not None:
        table.save(out_dir)
    return table
