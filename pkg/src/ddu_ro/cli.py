"""Command-line front end: instance generation, validation, solving with
run logging, oracle verification, and benchmark tables.

Exit codes: 0 solved (optimal or approximate bracket), 1 infeasible,
2 resource limit reached, 3 usage or input errors.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from .ccg_miu import run_ccg_miu
from .general_ccg import run_approx_miu, run_extended_nested
from .model import (ProblemInstance, load_instance, save_instance, validate)
from .nested_ccg import run_nested
from .oracle import oracle_exact_pure_integer, oracle_interval_u
from .report import RunConfig, _json_default
from .rfl_bench import RflConfig, generate_rfl, run_table_experiment

EXIT_OK, EXIT_INFEASIBLE, EXIT_LIMIT, EXIT_USAGE = 0, 1, 2, 3


def dispatch_algo(instance: ProblemInstance, algo: str) -> str:
    """Route "auto" on the instance shape; approximate only on request."""
    if algo != "auto":
        return algo
    if instance.recourse.m_y == 0:
        return "miu"
    if instance.ddu.m_u == 0:
        return "nested"
    return "extended"


_RUNNERS = {"miu": run_ccg_miu, "nested": run_nested,
            "extended": run_extended_nested, "approx": run_approx_miu}


def _load(path: str) -> ProblemInstance:
    try:
        inst = load_instance(path)
    except FileNotFoundError:
        raise SystemExit2(f"instance file not found: {path}")
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise SystemExit2(f"malformed instance {path}: "
                          f"{type(exc).__name__}: {exc}")
    issues = validate(inst)
    if issues:
        raise SystemExit2(f"invalid instance {path}: " + "; ".join(issues))
    return inst


class SystemExit2(Exception):
    """Usage/IO error carrying a message for stderr."""


def _write_run_dir(out_dir: str, instance_path: str, config: RunConfig,
                   report) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps(config.to_dict(), indent=1) + "\n")
    digest = hashlib.sha256(Path(instance_path).read_bytes()).hexdigest()
    (out / "instance.sha256").write_text(digest + "\n")
    ledger = getattr(report, "ledger", None)
    (out / "trace.jsonl").write_text(
        (ledger.to_jsonl() + "\n") if ledger is not None else "")
    (out / "report.json").write_text(report.to_json() + "\n")


def _report_exit(status: str) -> int:
    if status in ("optimal", "approx"):
        return EXIT_OK
    if status in ("infeasible", "RC assumption violated"):
        return EXIT_INFEASIBLE
    return EXIT_LIMIT


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_rfl(args) -> int:
    cfg = RflConfig(n_sites=args.sites, variant=args.variant, ddu=args.ddu,
                    r=args.r, k2=args.k2)
    inst = generate_rfl(cfg, seed=args.seed)
    save_instance(inst, args.output)
    print(f"wrote {args.output}: {cfg.variant}/{cfg.ddu} "
          f"{args.sites} sites, r={args.r}, k2={args.k2}, seed={args.seed}")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        inst = load_instance(args.instance)
    except FileNotFoundError:
        print(f"instance file not found: {args.instance}", file=sys.stderr)
        return EXIT_USAGE
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        print(f"malformed instance: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_USAGE
    issues = validate(inst)
    if issues:
        for msg in issues:
            print(f"invalid: {msg}", file=sys.stderr)
        return EXIT_USAGE
    ddu, rc = inst.ddu, inst.recourse
    print(f"ok: n_x={inst.first_stage.n_x} m_x={inst.first_stage.m_x} "
          f"n_u={ddu.n_u} m_u={ddu.m_u} n_y={rc.n_y} m_y={rc.m_y}")
    return EXIT_OK


def _make_config(args, algo: str) -> RunConfig:
    return RunConfig(algo=algo, tol_gap=args.tol_gap, tol_feas=args.tol_feas,
                     time_limit=args.time_limit, max_iters=args.max_iters,
                     bigM=args.big_m, init=args.init, out_dir=args.out_dir)


def cmd_solve(args) -> int:
    inst = _load(args.instance)
    algo = dispatch_algo(inst, args.algo)
    config = _make_config(args, algo)
    report = _RUNNERS[algo](inst, config)
    if args.out_dir:
        _write_run_dir(args.out_dir, args.instance, config, report)
    gap = report.gap
    print(f"algo={algo} status={report.status} "
          f"LB={report.lb:.6g} UB={report.ub:.6g} "
          f"gap={gap if np.isfinite(gap) else 'inf'} "
          f"iters={getattr(report, 'iterations', None)} "
          f"stop={report.stop_reason} "
          f"time={report.wall_time:.2f}s")
    return _report_exit(report.status)


def cmd_verify(args) -> int:
    inst = _load(args.instance)
    if inst.ddu.n_u == 0:
        orc = oracle_exact_pure_integer(inst, budget=args.budget)
    elif inst.ddu.n_u == 1:
        orc = oracle_interval_u(inst, budget=args.budget)
    else:
        print("no oracle covers instances with more than one continuous "
              "uncertainty dimension", file=sys.stderr)
        return EXIT_USAGE
    algo = dispatch_algo(inst, args.algo)
    config = _make_config(args, algo)
    report = _RUNNERS[algo](inst, config)
    if orc.feasible != (report.status == "optimal"):
        print(f"status mismatch: oracle "
              f"{'feasible' if orc.feasible else 'infeasible'}, "
              f"{algo} reported {report.status}")
        return EXIT_INFEASIBLE if report.status == "infeasible" else EXIT_LIMIT
    if not orc.feasible:
        print("agreed infeasible")
        return EXIT_INFEASIBLE
    tol = max(1e-6, 1e-6 * abs(orc.w_star))
    diff = abs(report.value - orc.w_star)
    ok = diff <= max(tol, args.tol * max(1.0, abs(orc.w_star)))
    print(f"oracle={orc.w_star:.8g} {algo}={report.value:.8g} "
          f"diff={diff:.3g} -> {'MATCH' if ok else 'MISMATCH'}")
    return EXIT_OK if ok else EXIT_LIMIT


def cmd_table(args) -> int:
    base = RflConfig(n_sites=args.sites, variant=args.variant)
    run_cfg = RunConfig(algo=args.algo or "auto", tol_gap=args.tol_gap,
                        time_limit=args.time_limit, max_iters=args.max_iters)
    t0 = time.perf_counter()
    table = run_table_experiment(
        args.variant, algo=args.algo,
        r_grid=tuple(float(v) for v in args.r_grid.split(",")),
        k2_grid=tuple(int(v) for v in args.k2_grid.split(",")),
        config=base, seed=args.seed, run_cfg=run_cfg, out_dir=args.out_dir)
    print(table.to_markdown())
    bad = [r for r in table.rows if r["status"] not in ("optimal", "approx")]
    print(f"# {len(table.rows)} cells, {len(bad)} unsolved, "
          f"{time.perf_counter() - t0:.1f}s")
    return EXIT_OK if not bad else EXIT_LIMIT


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_run_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tol-gap", type=float, default=0.005)
    p.add_argument("--tol-feas", type=float, default=1e-6)
    p.add_argument("--time-limit", type=float, default=3600.0)
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--big-m", type=float, default=1e4)
    p.add_argument("--init", choices=("relax", "naive"), default="relax")
    p.add_argument("--out-dir", default=None,
                   help="write config echo, instance hash, trace, report")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ddu-ro",
        description="Two-stage robust optimization with decision-dependent "
                    "uncertainty: exact and approximate cutting-plane "
                    "solvers.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-rfl", help="generate a facility-location instance")
    g.add_argument("--variant", choices=("L", "I"), default="L")
    g.add_argument("--ddu", choices=("C", "I"), default="C")
    g.add_argument("--sites", type=int, default=12)
    g.add_argument("--r", type=float, default=0.1)
    g.add_argument("--k2", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_gen_rfl)

    v = sub.add_parser("validate", help="check an instance file")
    v.add_argument("instance")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("solve", help="solve an instance")
    s.add_argument("instance")
    s.add_argument("--algo", default="auto",
                   choices=("auto", "miu", "nested", "extended", "approx"))
    _add_run_opts(s)
    s.set_defaults(func=cmd_solve)

    w = sub.add_parser("verify", help="compare a solve against a brute-force "
                                      "oracle (small instances)")
    w.add_argument("instance")
    w.add_argument("--algo", default="auto",
                   choices=("auto", "miu", "nested", "extended"))
    w.add_argument("--budget", type=int, default=100_000)
    w.add_argument("--tol", type=float, default=1e-5)
    _add_run_opts(w)
    w.set_defaults(func=cmd_verify)

    t = sub.add_parser("table", help="run a benchmark sweep")
    t.add_argument("--variant", choices=("L", "I"), required=True)
    t.add_argument("--algo", default=None,
                   choices=("miu", "nested", "extended", "approx"))
    t.add_argument("--sites", type=int, default=12)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--r-grid", default="0.1,0.2,0.3,0.4,0.5")
    t.add_argument("--k2-grid", default="1,2,3,4,5")
    t.add_argument("--tol-gap", type=float, default=0.005)
    t.add_argument("--time-limit", type=float, default=3600.0)
    t.add_argument("--max-iters", type=int, default=50)
    t.add_argument("--out-dir", default=None)
    t.set_defaults(func=cmd_table)
    return ap


def main(argv: Optional[list] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:        # argparse uses its own exit codes
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except SystemExit2 as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
