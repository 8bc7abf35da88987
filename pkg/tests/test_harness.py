import csv
import json
import math
import time

import numpy as np
import pytest

from stagnate_lab.harness import (EXIT_CHECK, EXIT_CONFIG, EXIT_OK, ConfigError, ExperimentConfig, main,
                                  parse_config, toy_pipeline, write_csv)

SMOKE = {"version": 1, "mc": {"n_runs": 10, "T": 100}}


def write_cfg(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_unknown_key_is_a_config_error(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"version": 1, "noise": {"sigma": 1.0}})
    assert main(["toy-relu", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    with pytest.raises(ConfigError):
        parse_config({"version": 2})
    with pytest.raises(ConfigError):
        parse_config({"bogus": 1})


def test_bad_json_and_bad_init(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["toy-relu", "--config", str(bad)]) == EXIT_CONFIG
    cfg = write_cfg(tmp_path, {**SMOKE, "init": [1.0, 2.0, 3.0]})
    assert main(["toy-relu", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_only_is_rejected_outside_verify(tmp_path):
    assert main(["toy-relu", "--only", "zeta", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_smoke_toy_relu(tmp_path):
    out = tmp_path / "o"
    t0 = time.perf_counter()
    rc = main(["toy-relu", "--config", write_cfg(tmp_path, SMOKE), "--out", str(out)])
    assert time.perf_counter() - t0 < 5.0
    assert rc in (EXIT_OK, EXIT_CHECK)
    for f in ("bounds.json", "bounds.csv", "summary.json", "runs.csv", "distance_summary.csv"):
        assert (out / f).stat().st_size > 0
    runs = read_csv(out / "runs.csv")
    assert len(runs) == 11 and runs[0][:3] == ["member", "a0", "a1"]
    reports = json.loads((out / "bounds.json").read_text())
    ids = {r["formula_id"] for r in reports}
    assert {"stagnation_lower_bound", "generalization_gap_bound", "optimization_error_bound"} <= ids
    assert all({"formula_id", "inputs", "value", "formula_valid", "notes"} <= set(r) for r in reports)


def test_zero_noise_converges_to_curve():
    cfg = ExperimentConfig().updated(noise={"sigma2": 0.0}, risk={"expected": True},
                                     mc={"n_runs": 1, "T": 10000, "parts": 1})
    res = toy_pipeline(cfg)
    assert res["final_curve_distance_max"] < 1e-3
    assert res["p_star"] == 0.0 and not res["reports"][0].formula_valid


def test_verify_only_zeta(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["verify-bounds", "--only", "zeta", "--out", str(out)]) == EXIT_OK
    rows = read_csv(out / "checks.csv")
    assert rows[0][:4] == ["name", "group", "formula_id", "passed"]
    assert {r[1] for r in rows[1:]} == {"zeta"} and len(rows) == 5
    assert "4/4 checks passed" in capsys.readouterr().out
    assert main(["verify-bounds", "--only", "nothing_like_this", "--out", str(out)]) == EXIT_CONFIG


def test_fault_injection_breaks_non_escape(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"version": 1, "bounds": {"C_tail": 1000.0}})
    rc = main(["verify-bounds", "--config", cfg, "--only", "stagnation.non_escape", "--out", str(tmp_path / "o")])
    text = capsys.readouterr().out
    assert rc == EXIT_CHECK
    assert "FAIL stagnation.non_escape" in text and "non_escape_lower" in text and "inputs:" in text


def _bytes(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


@pytest.mark.parametrize("cmd", ["toy-relu", "landscape-2d", "run-sgd"])
def test_outputs_are_byte_identical(tmp_path, cmd):
    cfg = write_cfg(tmp_path, {**SMOKE, "landscape": {"grid": 11, "traj_T": 20}})
    a, b = tmp_path / "a", tmp_path / "b"
    main([cmd, "--config", cfg, "--out", str(a), "--seed", "3"])
    main([cmd, "--config", cfg, "--out", str(b), "--seed", "3"])
    assert _bytes(a) == _bytes(b)


def test_thread_count_does_not_change_bytes(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, SMOKE)
    monkeypatch.setenv("STAGNATE_LAB_THREADS", "1")
    main(["toy-relu", "--config", cfg, "--out", str(tmp_path / "a")])
    monkeypatch.setenv("STAGNATE_LAB_THREADS", "4")
    main(["toy-relu", "--config", cfg, "--out", str(tmp_path / "b")])
    assert _bytes(tmp_path / "a") == _bytes(tmp_path / "b")


def test_landscape_constant_model(tmp_path):
    cfg = write_cfg(tmp_path, {"version": 1, "risk": {"oracle": "constant", "constant": 2.5},
                               "landscape": {"grid": 9, "traj_T": 5}})
    out = tmp_path / "o"
    assert main(["landscape-2d", "--config", cfg, "--out", str(out)]) == EXIT_OK
    rows = read_csv(out / "landscape.csv")[1:]
    assert len(rows) == 81 and {r[2] for r in rows} == {"2.5"}


def test_landscape_toy_minimum_follows_curve(tmp_path):
    cfg = write_cfg(tmp_path, {"version": 1, "landscape": {"center": [1.0, 1.5], "grid": 41, "traj_T": 0}})
    out = tmp_path / "o"
    main(["landscape-2d", "--config", cfg, "--out", str(out)])
    dirs = json.loads((out / "directions.json").read_text())
    c, d1, d2 = (np.array(dirs[k]) for k in ("center", "d1", "d2"))
    assert abs(d1 @ d2) < 1e-12 and math.isclose(d1 @ d1, 1.0) and math.isclose(d2 @ d2, 1.0)
    g = np.array([[float(x) for x in r] for r in read_csv(out / "landscape.csv")[1:]])
    pts = c + g[:, :1] * d1 + g[:, 1:2] * d2
    u = pts[:, 0] * pts[:, 1]
    closed = 1 - u + u * u / 3  # the oracle polynomial, also used for a1 < 0
    np.testing.assert_allclose(g[:, 2], closed, rtol=1e-12, atol=1e-15)
    assert math.isclose(g[:, 2].min(), 0.25, abs_tol=1e-12)
    near = g[:, 2] <= 0.25 + 1e-3  # (u - 3/2)^2 / 3 <= 1e-3
    assert np.all(np.abs(u[near] - 1.5) <= math.sqrt(3e-3) + 1e-9)


def test_stagnation_mc_delta_zero(tmp_path):
    cfg = write_cfg(tmp_path, {"version": 1, "atlas": {"delta": 0.0}, "mc": {"n_runs": 100, "T": 50, "deltas": [0.0]}})
    out = tmp_path / "o"
    assert main(["stagnation-mc", "--config", cfg, "--out", str(out)]) == EXIT_OK
    rows = read_csv(out / "stagnation.csv")
    h = rows[0]
    r = dict(zip(h, rows[1]))
    assert float(r["p_hat"]) == 0.0 and float(r["p_star"]) == 0.0 and r["dominance"] == "true"


def test_stagnation_mc_noise_free_in_basin(tmp_path):
    a = math.sqrt(1.5)
    cfg = write_cfg(tmp_path, {"version": 1, "noise": {"sigma2": 0.0}, "init": [a, a], "risk": {"expected": True},
                               "mc": {"n_runs": 100, "T": 50, "deltas": [0.5]}})
    out = tmp_path / "o"
    assert main(["stagnation-mc", "--config", cfg, "--out", str(out)]) == EXIT_OK
    r = dict(zip(*read_csv(out / "stagnation.csv")[:2]))
    assert float(r["p_hat"]) == 1.0 and r["dominance"] == "true"


def test_csv_floats_round_trip(tmp_path):
    vals = [0.1 + 0.2, math.pi, 1e-300, -2.5e17, 1 / 3]
    write_csv(tmp_path / "x.csv", ["v"], [[v] for v in vals])
    back = [float(r[0]) for r in read_csv(tmp_path / "x.csv")[1:]]
    assert back == vals


def test_run_sgd_outputs(tmp_path):
    cfg = write_cfg(tmp_path, {"version": 1, "mc": {"T": 15}})
    out = tmp_path / "o"
    assert main(["run-sgd", "--config", cfg, "--out", str(out)]) == EXIT_OK
    lines = (out / "trajectory.jsonl").read_text().splitlines()
    assert len(lines) == 16
    rec = json.loads(lines[-1])
    assert rec["t"] == 15 and len(rec["hit_flags"]) == 4
    final = json.loads((out / "final.json").read_text())
    assert final["architecture"]["widths"] == [1, 1, 1]


def test_non_finite_gradient_aborts_with_diagnostic(monkeypatch, tmp_path, capsys):
    from stagnate_lab import harness
    from stagnate_lab.optimizer import NonFiniteGradientError

    def boom(cfg, out=None):
        raise NonFiniteGradientError(7, [1.0, float("inf")])

    monkeypatch.setitem(harness.COMMANDS, "run-sgd", boom)
    assert main(["run-sgd", "--out", str(tmp_path)]) == EXIT_CHECK
    err = capsys.readouterr().err
    assert "step 7" in err and "inf" in err


def test_alpha_below_one_is_noted(tmp_path):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, {**SMOKE, "schedule": {"c": 0.5, "alpha": 0.8}})
    main(["toy-relu", "--config", cfg, "--out", str(out)])
    notes = json.loads((out / "summary.json").read_text())["estimates"]["notes"]
    assert any("alpha < 1" in n for n in notes)
