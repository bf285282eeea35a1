from __future__ import annotations

import json
import math

import pytest

from telegraph_ldp import __version__
from telegraph_ldp.cli import (
    EXIT_CAPACITY,
    EXIT_DOMAIN,
    EXIT_MISMATCH,
    EXIT_OK,
    EXIT_USAGE,
    OUTPUT_ENV,
    dumps,
    parse_coefficient,
    parse_target,
    run,
)


def _out(tmp_path, name="out"):
    return ["--output-dir", str(tmp_path / name)]


def test_rate_eval_lambda_star(tmp_path, capsys):
    assert run(["rate", "eval", "--lambda-star", "0.5", *_out(tmp_path)]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "0.1339746"


def test_rate_eval_several_quantities(tmp_path, capsys):
    assert run(["rate", "eval", "--lambda-star", "0.5", "--cgf", "1", *_out(tmp_path)]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2
    assert lines[1].split()[1] == f"{math.sqrt(2) - 1:.7g}"


def test_simulate_telegraph_is_deterministic(tmp_path):
    args = ["simulate", "telegraph", "--epsilon", "0.1", "--seed", "42"]
    assert run([*args, *_out(tmp_path, "a")]) == EXIT_OK
    assert run([*args, *_out(tmp_path, "b")]) == EXIT_OK
    a = (tmp_path / "a" / "simulate_telegraph.csv").read_bytes()
    b = (tmp_path / "b" / "simulate_telegraph.csv").read_bytes()
    assert a == b
    assert a.startswith(b"segment_index,start_t,end_t,theta_value\n")


def test_manifest_records_config_and_hashes(tmp_path):
    assert run(["simulate", "telegraph", "--epsilon", "0.2", "--seed", "3", *_out(tmp_path)]) == EXIT_OK
    m = json.loads((tmp_path / "out" / "simulate_telegraph_manifest.json").read_text())
    assert m["version"] == __version__
    assert m["command"] == ["simulate", "telegraph"]
    assert m["config"]["epsilon"] == 0.2 and m["config"]["seed"] == 3
    assert set(m["outputs"]) == {"simulate_telegraph.csv"}


def test_replay_reproduces_and_detects_tampering(tmp_path):
    assert run(["simulate", "sde", "--epsilon", "0.3", "--drift", "linear:-1", "--diffusion", "cos:1",
                "--grid", "20", *_out(tmp_path)]) == EXIT_OK
    manifest = tmp_path / "out" / "simulate_sde_manifest.json"
    assert run(["replay", "--manifest", str(manifest)]) == EXIT_OK
    assert (tmp_path / "out" / "replay" / "simulate_sde.csv").read_bytes() == (
        tmp_path / "out" / "simulate_sde.csv"
    ).read_bytes()
    m = json.loads(manifest.read_text())
    m["outputs"]["simulate_sde.csv"] = "0" * 64
    manifest.write_text(json.dumps(m))
    assert run(["replay", "--manifest", str(manifest)]) == EXIT_MISMATCH


def test_mc_estimate_replays_at_other_thread_counts(tmp_path):
    assert run(["mc", "estimate", "--epsilon", "0.4", "--n", "25000", "--threads", "2", *_out(tmp_path)]) == EXIT_OK
    manifest = tmp_path / "out" / "mc_estimate_manifest.json"
    for t in ("1", "8"):
        assert run(["replay", "--manifest", str(manifest), "--threads", t,
                    "--output-dir", str(tmp_path / f"r{t}")]) == EXIT_OK


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epsilon": 0.5, "seed": 9}))
    assert run(["simulate", "telegraph", "--config", str(cfg), "--seed", "4", *_out(tmp_path)]) == EXIT_OK
    m = json.loads((tmp_path / "out" / "simulate_telegraph_manifest.json").read_text())
    assert m["config"]["epsilon"] == 0.5
    assert m["config"]["seed"] == 4


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert run(["simulate", "telegraph", "--epsilon", "0.5"]) == EXIT_OK
    assert (tmp_path / "env" / "simulate_telegraph.csv").exists()


def test_exit_codes(tmp_path):
    assert run(["frobnicate"]) == EXIT_USAGE
    assert run(["mc", "nothing"]) == EXIT_USAGE
    assert run(["simulate", "telegraph", "--epsilon", "-1", *_out(tmp_path)]) == EXIT_DOMAIN
    assert run(["simulate", "telegraph", "--epsilon", "1e-5", *_out(tmp_path)]) == EXIT_CAPACITY
    assert run(["simulate", "telegraph", "--initial", "sideways", *_out(tmp_path)]) == EXIT_DOMAIN


def test_rate_action_reports_the_brownian_rate(tmp_path):
    assert run(["rate", "action", "--target", "linear:0.5", "--grid", "50", *_out(tmp_path)]) == EXIT_OK
    res = json.loads((tmp_path / "out" / "rate_action.json").read_text())
    assert res["value"] == pytest.approx(1 - math.sqrt(0.75), abs=1e-4)


def test_infeasible_action_is_written_as_a_string(tmp_path):
    assert run(["rate", "action", "--model", "path", "--target", "linear:1.5", *_out(tmp_path)]) == EXIT_OK
    res = json.loads((tmp_path / "out" / "rate_action.json").read_text())
    assert res["value"] == "inf"


def test_mc_phase_table_targets(tmp_path, capsys):
    args = ["mc", "phase", "--kappa", "1", "--beta", "0.5", "--threshold", "0.5",
            "--epsilons", "0.5,0.4,0.3", "--n", "2000", "--format", "json", *_out(tmp_path)]
    assert run(args) == EXIT_OK
    report = json.loads((tmp_path / "out" / "mc_phase.json").read_text())
    targets = sorted(cell["target"] for cell in report["cells"])
    assert targets[0] == pytest.approx(-0.1339746, abs=5e-8)
    assert targets[1] == pytest.approx(-0.125, abs=1e-15)


def test_kernel_selftest_command(tmp_path):
    assert run(["kernel", "selftest", "--kernels", "brownian;ou:1,1", *_out(tmp_path)]) == EXIT_OK
    rep = json.loads((tmp_path / "out" / "kernel_selftest.json").read_text())
    assert [r["family"] for r in rep["kernels"]] == ["brownian", "ou"]


def test_bounds_verify_command(tmp_path):
    args = ["bounds", "verify", "--epsilons", "0.5", "--levels", "0.5,1", "--n", "5000", "--fuzz-n", "1000",
            *_out(tmp_path)]
    assert run(args) == EXIT_OK
    rep = json.loads((tmp_path / "out" / "bounds_verify.json").read_text())
    assert rep["all_passed"] is True
    assert len(rep["cells"]) == 2


def test_csv_uses_round_trip_precision(tmp_path):
    assert run(["simulate", "gaussian", "--epsilon", "0.3", "--grid", "10", *_out(tmp_path)]) == EXIT_OK
    rows = (tmp_path / "out" / "simulate_gaussian.csv").read_text().splitlines()[1:]
    for row in rows:
        t, v = row.split(",")
        assert float(repr(float(v))) == float(v)
        assert float(f"{float(t):.17g}") == float(t)


def test_strict_json_encoding():
    text = dumps({"a": float("inf"), "b": [float("-inf"), float("nan")], "c": 1.5})
    assert json.loads(text) == {"a": "inf", "b": ["-inf", "nan"], "c": 1.5}


def test_parsers():
    f, lip, const = parse_coefficient("affine:1,2")
    assert f(3.0) == 7.0 and lip == 2.0 and const is None
    assert parse_target("linear:0.4", 10).values[-1] == pytest.approx(0.4)
