"""Run configuration, per-iteration bound ledgers, and solve reports shared
by all algorithm modules."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass
class RunConfig:
    algo: str = "auto"
    tol_gap: float = 0.005          # relative optimality gap
    tol_feas: float = 1e-6
    time_limit: float = 3600.0
    max_iters: int = 50
    bigM: float = 1e4
    init: str = "relax"             # relax | naive
    feas_slack: str = "scalar"      # scalar | vector (inner feasibility)
    inheritance: bool = False       # reuse inner Y_d sets across outer iters
    backend: dict = field(default_factory=lambda: {
        "name": "highs", "threads": 1, "seed": 0})
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.tol_gap <= 0 or self.tol_feas <= 0:
            raise ValueError("tolerances must be positive")
        if self.time_limit <= 0 or self.max_iters <= 0:
            raise ValueError("limits must be positive")

    def to_dict(self) -> dict:
        return {
            "algo": self.algo, "tol_gap": self.tol_gap,
            "tol_feas": self.tol_feas, "time_limit": self.time_limit,
            "max_iters": self.max_iters, "bigM": self.bigM,
            "init": self.init, "feas_slack": self.feas_slack,
            "inheritance": self.inheritance, "backend": dict(self.backend),
            "out_dir": self.out_dir,
        }


def gap_closed(lb: float, ub: float, tol: float) -> bool:
    """Relative stopping test |UB - LB| <= tol * max(1, |UB|)."""
    if not (np.isfinite(lb) and np.isfinite(ub)):
        return False
    return abs(ub - lb) <= tol * max(1.0, abs(ub))


def relative_gap(lb: float, ub: float) -> float:
    if not (np.isfinite(lb) and np.isfinite(ub)):
        return float("inf")
    return abs(ub - lb) / max(1.0, abs(ub))


class BoundsLedger:
    """Per-iteration LB/UB records with monotonicity enforced on append."""

    def __init__(self, tol: float = 1e-6):
        self.tol = tol
        self.records: list = []

    def add(self, t: int, lb: float, ub: float, **extra) -> dict:
        if self.records:
            prev = self.records[-1]
            if lb < prev["LB"] - self.tol:
                raise AssertionError(
                    f"lower bound decreased: {prev['LB']} -> {lb}")
            if ub > prev["UB"] + self.tol:
                raise AssertionError(
                    f"upper bound increased: {prev['UB']} -> {ub}")
        if np.isfinite(lb) and np.isfinite(ub) and lb > ub + max(
                self.tol, 1e-6 * max(1.0, abs(ub))):
            raise AssertionError(f"bound crossing: LB={lb} > UB={ub}")
        rec = {"t": int(t), "LB": float(lb), "UB": float(ub), **extra}
        self.records.append(rec)
        return rec

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(r, default=_json_default)
                         for r in self.records)

    def __len__(self):
        return len(self.records)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"not JSON serializable: {type(o)}")


@dataclass
class SolveReport:
    status: str                    # optimal | infeasible | limit | error
    value: Optional[float]         # incumbent objective (UB) when available
    x_star: Optional[np.ndarray]
    lb: float
    ub: float
    iterations: int
    wall_time: float
    stop_reason: Optional[str] = None   # gap | repeated_x | iter_limit | ...
    ledger: Optional[BoundsLedger] = None
    cuts: list = field(default_factory=list)
    config: Optional[dict] = None
    extra: dict = field(default_factory=dict)

    @property
    def gap(self) -> float:
        return relative_gap(self.lb, self.ub)

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "value": None if self.value is None else float(self.value),
            "x_star": None if self.x_star is None else
            np.asarray(self.x_star).tolist(),
            "LB": float(self.lb), "UB": float(self.ub),
            "gap": float(self.gap) if np.isfinite(self.gap) else None,
            "iterations": self.iterations,
            "wall_time": self.wall_time,
            "stop_reason": self.stop_reason,
            "cuts": self.cuts,
            "config": self.config,
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, default=_json_default)
