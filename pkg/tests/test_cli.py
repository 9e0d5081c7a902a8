import json
import subprocess
import sys

import pytest

from oscarsim import cli
from oscarsim.estimates import estimate_report
from oscarsim.params import ExperimentalParams

SMALL = {"eps": 4, "eta": 0.3, "A": 3}


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


def test_estimate_report_matches_module(tmp_path):
    cfg = write(tmp_path, {"mode": "estimate", "params": "reference"})
    assert run_cli("estimate", "--config", cfg, "--out", tmp_path / "out") == cli.EXIT_OK
    report = json.loads((tmp_path / "out" / "estimates.json").read_text())
    direct = estimate_report(ExperimentalParams.reference())
    assert report["dfc_rel"] == pytest.approx(direct.dfc_rel, rel=1e-12)
    assert report["X_q"] == pytest.approx(direct.X_q, rel=1e-12)
    assert report["dfc_rel"] == pytest.approx(-4.7e-7, rel=0.05)
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["mode"] == "estimate" and "estimates.json" in manifest["outputs"]


def test_empty_config_is_validation_error(tmp_path):
    assert run_cli("run", "--config", write(tmp_path, {}), "--out", tmp_path / "o") == cli.EXIT_VALIDATION
    assert not (tmp_path / "o" / "manifest.json").exists()


def test_unreadable_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run_cli("run", "--config", bad) == cli.EXIT_VALIDATION


def noisy_config():
    return {"mode": "schrodinger", "params": {**SMALL, "Delta0": 0.4},
            "run": {"t_end": 8, "sample_every": 0.1}, "seed": 11}


def test_same_seed_gives_identical_csv(tmp_path):
    cfg = write(tmp_path, noisy_config())
    for d in ("a", "b"):
        assert run_cli("schrodinger", "--config", cfg, "--out", tmp_path / d) == cli.EXIT_OK
    a = (tmp_path / "a" / "trajectory.csv").read_bytes()
    assert a == (tmp_path / "b" / "trajectory.csv").read_bytes()
    assert b"\r" not in a
    run_cli("schrodinger", "--config", cfg, "--out", tmp_path / "c", "--seed", "12")
    assert (tmp_path / "c" / "trajectory.csv").read_bytes() != a


def test_manifest_records_flips_and_replays(tmp_path):
    cfg = write(tmp_path, noisy_config())
    out = tmp_path / "run"
    assert run_cli("schrodinger", "--config", cfg, "--out", out) == cli.EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 11
    assert manifest["flip_times"] and all(0 < t < 8 for t in manifest["flip_times"])
    assert manifest["invariants"]
    same, diff = cli.replay(out)
    assert same and diff == {}
    assert run_cli("replay", out) == cli.EXIT_OK
    (out / "trajectory.csv").write_text("tampered\n")
    manifest["outputs"]["trajectory.csv"] = "0" * 64
    (out / "manifest.json").write_text(json.dumps(manifest))
    assert run_cli("replay", out) == cli.EXIT_NUMERICAL


def test_json_format(tmp_path):
    cfg = write(tmp_path, noisy_config())
    assert run_cli("schrodinger", "--config", cfg, "--out", tmp_path / "o", "--format", "json") == 0
    data = json.loads((tmp_path / "o" / "trajectory.json").read_text())
    assert data["columns"][:2] == ["t", "x_mean"]


def codes(diags, level="error"):
    return [d.code for d in diags if d.level == level]


def test_validate_dt_bound_named():
    diags = cli.validate({"mode": "schrodinger", "params": {**SMALL, "dt": 0.1}, "run": {"t_end": 1}})
    msg = [d.message for d in diags if d.code == "dt"]
    assert msg and "dt*E_max <= 0.05" in msg[0]


def test_validate_suggests_n_max():
    diags = cli.validate({"mode": "schrodinger", "params": {"eps": 10, "eta": 0.3, "A": 13, "n_max": 50},
                          "run": {"t_end": 1}})
    msg = [d.message for d in diags if d.code == "n_max"]
    assert msg and "suggested n_max=" in msg[0]


def test_validate_benchmark_has_single_warning():
    diags = cli.validate({"mode": "schrodinger", "params": {"eps": 10, "eta": 0.3, "A": 13},
                          "run": {"t_end": 1}})
    assert codes(diags) == []
    warnings = [d for d in diags if d.level == "warning"]
    assert len(warnings) == 1
    assert warnings[0].code == "full-reversal" and "7.8" in warnings[0].message


def test_validate_never_mutates():
    raw = {"mode": "schrodinger", "params": {**SMALL, "n_max": 2}, "run": {"t_end": 1}}
    before = json.dumps(raw, sort_keys=True)
    cli.validate(raw)
    assert json.dumps(raw, sort_keys=True) == before


@pytest.mark.parametrize("raw, code", [
    ({"mode": "schrodinger", "params": SMALL, "run": {"t_end": 1, "tend": 2}}, "unknown-key"),
    ({"mode": "schrodinger", "parms": SMALL, "run": {"t_end": 1}}, "unknown-key"),
    ({"mode": "schrodinger", "params": {**SMALL, "B1": 3e-3}, "run": {"t_end": 1}}, "mixed-units"),
    ({"mode": "schrodinger", "params": SMALL, "run": {}}, "missing-key"),
    ({"mode": "teleport", "params": SMALL}, "mode"),
    ({"mode": "schrodinger", "params": SMALL, "run": {"t_end": 1}, "seed": -1}, "seed"),
    ({"mode": "master", "params": {**SMALL, "T": 1, "Q": 10}, "run": {"t_end": 1},
      "gates": {"kind": "pi_pulse", "t_start": 0}}, "gates"),
])
def test_bad_configs_rejected(raw, code):
    assert code in codes(cli.validate(raw))


def test_validate_command_exit_codes(tmp_path, capsys):
    good = write(tmp_path, {"mode": "estimate", "params": "reference"}, "good.json")
    assert run_cli("validate", "--config", good) == cli.EXIT_OK
    capsys.readouterr()
    bad = write(tmp_path, {"mode": "estimate", "params": "reference", "x": 1}, "bad.json")
    assert run_cli("validate", "--config", bad) == cli.EXIT_VALIDATION
    printed = json.loads(capsys.readouterr().out)
    assert printed[0]["code"] == "unknown-key"


def test_truncation_exit_code(tmp_path):
    cfg = {"mode": "schrodinger", "params": SMALL,
           "run": {"t_end": 1, "integrator": "expm", "leakage_limit": 1e-30}}
    assert run_cli("run", "--config", write(tmp_path, cfg), "--out", tmp_path / "o") == cli.EXIT_TRUNCATION


def test_numerical_failure_exit_code(tmp_path):
    cfg = {"mode": "master", "params": {**SMALL, "A": 2, "T": 5, "Q": 100, "n_max": 24},
           "run": {"t_end": 20, "integrator": "rk4", "dt": 1.0}}
    assert run_cli("run", "--config", write(tmp_path, cfg), "--out", tmp_path / "o") == cli.EXIT_NUMERICAL


def test_thread_count_from_environment(monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    assert cli._thread_default() == 3
    monkeypatch.setenv(cli.THREADS_ENV, "many")
    assert cli._thread_default() == 1


def test_seed_must_be_u64(tmp_path, capsys):
    cfg = write(tmp_path, noisy_config())
    with pytest.raises(SystemExit):
        run_cli("schrodinger", "--config", cfg, "--seed", str(2**64))


def test_master_and_analyze_pipeline(tmp_path):
    m = write(tmp_path, {"mode": "master", "params": {**SMALL, "T": 5, "Q": 200, "n_max": 40},
                         "run": {"t_end": 4, "matrix_every": 4}}, "m.json")
    assert run_cli("master", "--config", m, "--out", tmp_path / "m") == cli.EXIT_OK
    assert (tmp_path / "m" / "rho_abs.bin").exists()
    a = write(tmp_path, {"mode": "analyze", "params": SMALL,
                         "inputs": {"trajectory": "m/trajectory.csv", "matrices": "m/rho_abs"}}, "a.json")
    assert run_cli("analyze", "--config", a, "--out", tmp_path / "a") == cli.EXIT_OK
    report = json.loads((tmp_path / "a" / "analysis.json").read_text())
    assert "crossings" in report


def test_analyze_missing_input(tmp_path):
    a = write(tmp_path, {"mode": "analyze", "params": SMALL,
                         "inputs": {"trajectory": "nowhere.csv"}})
    assert "missing-file" in codes(cli.validate(json.loads(a.read_text()), base_dir=tmp_path))


def test_console_script_entry_point():
    out = subprocess.run([sys.executable, "-m", "oscarsim.cli", "--version"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "oscarsim" in out.stdout
