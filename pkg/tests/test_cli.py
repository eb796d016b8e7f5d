"""Command-line interface: exit codes, run artifacts, dispatch."""
import json

import numpy as np

from _factories import (random_interval_u_instance, random_mixed_instance,
                        random_pure_integer_instance)
from ddu_ro.cli import dispatch_algo, main
from ddu_ro.model import save_instance


def test_gen_validate_solve_round_trip(tmp_path, capsys):
    inst = tmp_path / "inst.json"
    assert main(["gen-rfl", "--variant", "L", "--ddu", "C", "--sites", "3",
                 "--seed", "3", "-o", str(inst)]) == 0
    assert main(["validate", str(inst)]) == 0
    out = capsys.readouterr().out
    assert "n_u=3" in out
    run = tmp_path / "run"
    assert main(["solve", str(inst), "--out-dir", str(run)]) == 0
    out = capsys.readouterr().out
    assert "algo=miu" in out and "status=optimal" in out
    # run directory is sufficient to replay
    cfg = json.loads((run / "config.json").read_text())
    assert cfg["algo"] == "miu" and cfg["tol_gap"] == 0.005
    assert len((run / "instance.sha256").read_text().strip()) == 64
    rep = json.loads((run / "report.json").read_text())
    assert rep["status"] == "optimal"
    assert rep["LB"] <= rep["UB"] + 1e-6
    trace = [json.loads(line) for line in
             (run / "trace.jsonl").read_text().splitlines()]
    assert trace and all({"t", "LB", "UB"} <= set(r) for r in trace)


def test_solve_infeasible_exit_code(tmp_path):
    inst = tmp_path / "inst.json"
    # this seed's 3-site geometry cannot cover its own worst-case demand
    assert main(["gen-rfl", "--sites", "3", "--seed", "0",
                 "-o", str(inst)]) == 0
    assert main(["solve", str(inst)]) == 1


def test_solve_time_limit_exit_code(tmp_path, capsys):
    inst = tmp_path / "inst.json"
    assert main(["gen-rfl", "--sites", "4", "--ddu", "I", "--seed", "1",
                 "-o", str(inst)]) == 0
    assert main(["solve", str(inst), "--time-limit", "0.01"]) == 2
    assert "status=limit" in capsys.readouterr().out


def test_malformed_instance_exit_3(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["solve", str(bad)]) == 3
    assert "malformed" in capsys.readouterr().err
    assert main(["validate", str(bad)]) == 3
    assert main(["solve", str(tmp_path / "missing.json")]) == 3
    assert main(["not-a-command"]) == 3


def test_auto_dispatch_by_shape():
    assert dispatch_algo(random_interval_u_instance(0), "auto") == "nested"
    assert dispatch_algo(random_pure_integer_instance(0), "auto") == "miu"
    assert dispatch_algo(random_mixed_instance(0), "auto") == "extended"
    assert dispatch_algo(random_mixed_instance(0), "approx") == "approx"


def test_verify_matches_oracle(tmp_path, capsys):
    p = tmp_path / "iv.json"
    save_instance(random_interval_u_instance(1), str(p))
    assert main(["verify", str(p)]) == 0
    assert "MATCH" in capsys.readouterr().out
    q = tmp_path / "mixed.json"
    save_instance(random_mixed_instance(1), str(q))
    assert main(["verify", str(q), "--algo", "extended"]) == 0


def test_table_command(tmp_path, capsys):
    out = tmp_path / "tbl"
    assert main(["table", "--variant", "L", "--sites", "3", "--seed", "3",
                 "--r-grid", "0.2", "--k2-grid", "1",
                 "--out-dir", str(out)]) == 0
    text = capsys.readouterr().out
    assert "| L | C | miu |" in text
    assert (out / "results.csv").exists()
