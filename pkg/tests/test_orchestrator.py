"""End-to-end pipeline wiring: artifacts, manifest determinism, verdict."""

import json
import math

import numpy as np
import pytest

from driftfront.cli import main
from driftfront.orchestrator import (ExperimentConfig, STAGES, Tolerances,
                                     compare, ray_choices, run_pipeline,
                                     validate_config)
from driftfront.pdefront import FrontTrace
from driftfront.wavecast import WaveReport


def demo_config(out_dir, **over):
    # constant drift 0.5: closed-form speeds sqrt(2) -/+ 0.5; the window is
    # wide enough for the BVP sweeps to escalate to their largest domain
    base = dict(drift_kind="constant", drift_params={"value": 0.5},
                drift_bound=0.6, window=(-560.0, 560.0), seed=0,
                betas=(1.0,), n_cells=8, eta_n=24, T_end=24.0,
                speed_rel_tol=0.10, out_dir=str(out_dir))
    base.update(over)
    return ExperimentConfig.from_dict(base)


@pytest.fixture(scope="module")
def demo_run(tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("demo")
    cfg = demo_config(out_dir)
    run_pipeline(cfg)
    return cfg, out_dir


def read_json(path):
    return json.loads(path.read_text())


def test_demo_artifacts_and_verdict(demo_run):
    cfg, out = demo_run
    for name in ("field.csv", "drift_spec.json", "mu_curves.csv",
                 "eta_c.json", "rate_functions.csv", "rate_properties.json",
                 "wave_report.json", "speed_sweep.csv", "front_trace_0.csv",
                 "ray_probes_0.csv", "snapshot_0.csv", "pde_summary.json",
                 "verdict.json", "manifest.json"):
        assert (out / name).exists(), name
    verdict = read_json(out / "verdict.json")
    assert verdict["passed"] is True
    (row,) = verdict["rows"]
    assert row["regime"] == "left_and_right"
    # smoke-test grid (eta_n=24): discretization bias well under a percent
    assert row["c1_star"] == pytest.approx(math.sqrt(2) + 0.5, rel=1e-2)
    assert row["c2_star"] == pytest.approx(math.sqrt(2) - 0.5, rel=1e-2)
    assert row["left_speed"] < 0 < row["right_speed"]
    assert all(chk["passed"] for chk in verdict["identities"].values())
    # the origin ray fills in; the probes past each boundary die out
    ray_by_c = {r["c"]: r for r in row["rays"]}
    assert ray_by_c[0.0]["verdict"] == "to_one"
    assert all(r["ok"] is not False for r in row["rays"])


def test_demo_manifest_structure(demo_run):
    cfg, out = demo_run
    man = read_json(out / "manifest.json")
    assert list(man["stages"]) == list(STAGES)
    for entry in man["stages"].values():
        assert set(entry) == {"inputs_hash", "outputs_hash", "files",
                              "wall_time_s"}
        for sha in entry["files"].values():
            assert len(sha) == 64
    assert man["config"]["betas"] == [1.0]
    assert len(man["determinism_digest"]) == 64


def test_rerun_reproduces_hashes(demo_run):
    cfg, out = demo_run
    first = read_json(out / "manifest.json")
    run_pipeline(cfg)  # same config, same directory: full overwrite
    second = read_json(out / "manifest.json")
    assert second["determinism_digest"] == first["determinism_digest"]
    for name in STAGES:
        assert second["stages"][name]["files"] == first["stages"][name]["files"]


def test_prefix_emits_only_its_stages(tmp_path):
    cfg = demo_config(tmp_path, stages=("drift", "lyapunov"))
    run_pipeline(cfg)
    assert (tmp_path / "mu_curves.csv").exists()
    assert not (tmp_path / "rate_functions.csv").exists()
    assert not (tmp_path / "verdict.json").exists()
    man = read_json(tmp_path / "manifest.json")
    assert list(man["stages"]) == ["drift", "lyapunov"]


def test_config_validation():
    with pytest.raises(ValueError, match="prefix"):
        validate_config(demo_config(".", stages=("drift", "ratefn")))
    with pytest.raises(ValueError, match="prefix"):
        validate_config(demo_config(".", stages=()))
    with pytest.raises(ValueError, match="positive"):
        validate_config(demo_config(".", betas=(1.0, -2.0)))
    with pytest.raises(ValueError, match="unknown config keys"):
        ExperimentConfig.from_dict({"drift_knd": "constant"})


def fake_trace(left_speed, right_speed):
    t = np.linspace(0.0, 10.0, 21)
    return FrontTrace(times=t, left=left_speed * t, right=right_speed * t,
                      level=0.5, left_speed=left_speed,
                      right_speed=right_speed, left_halfwidth=0.01,
                      right_halfwidth=0.01, fit_window=(5.0, 10.0))


def fake_report(beta, c1, c2, regime):
    return WaveReport(beta=beta, eta_c=0.125, eta_c_width=1e-3, c1_star=c1,
                      c2_star=c2, regime=regime, R1=((-c1, c2),),
                      R0=((-math.inf, -c1), (c2, math.inf)), provenance={})


def test_compare_rows():
    tol = Tolerances()
    report = fake_report(1.0, math.sqrt(2) + 0.5, math.sqrt(2) - 0.5,
                         "left_and_right")
    row = compare(report, fake_trace(-1.90, 0.90), [], tol, beta=1.0)
    assert row.passed and row.regime_match
    assert row.left_rel_err < 0.01 and row.right_err < 0.02
    # same measurement against a wrong-regime prediction must fail
    wrong = fake_report(0.3, 1.3, -0.3, "both_left")
    row = compare(wrong, fake_trace(-1.90, 0.90), [], tol)
    assert not row.regime_match and not row.passed
    # and pairing mismatched betas is an error, not a row
    with pytest.raises(ValueError, match="provenance mismatch"):
        compare(wrong, fake_trace(-1.90, 0.90), [], tol, beta=1.0)


def test_compare_stagnant_uses_absolute_error():
    tol = Tolerances()
    report = fake_report(0.125, 1.0, 0.0, "stagnant")
    row = compare(report, fake_trace(-1.0, 0.04), [], tol)
    assert row.right_err_mode == "absolute"
    assert row.passed
    row = compare(report, fake_trace(-1.0, 0.4), [], tol)
    assert not row.passed


def test_ray_choices_cover_both_sides():
    report = fake_report(1.0, 1.914, 0.914, "left_and_right")
    rays = ray_choices(report)
    assert 0.0 in rays
    assert min(rays) < -1.914 and max(rays) > 0.914
    assert any(-1.914 < c < 0.914 and c != 0.0 for c in rays)


def test_cli_gen_drift(tmp_path):
    rc = main(["gen-drift", "--out-dir", str(tmp_path), "--window", "-8", "8",
               "--drift-params", '{"value": 0.25}', "--drift-bound", "0.5"])
    assert rc == 0
    assert (tmp_path / "field.csv").exists()
    assert not (tmp_path / "mu_curves.csv").exists()
    spec = read_json(tmp_path / "drift_spec.json")
    assert spec["params"]["value"] == 0.25


def test_cli_flags_override_config(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(demo_config(tmp_path / "a").to_json())
    rc = main(["gen-drift", "--config", str(cfg_path), "--seed", "3",
               "--out-dir", str(tmp_path / "b"), "--window", "-8", "8"])
    assert rc == 0
    spec = read_json(tmp_path / "b" / "drift_spec.json")
    assert spec["seed"] == 3


def test_cli_verify_exit_codes(tmp_path, capsys):
    ok_cfg = tmp_path / "ok.json"
    ok_cfg.write_text(demo_config(tmp_path / "ok").to_json())
    assert main(["verify", "--config", str(ok_cfg)]) == 0
    assert "verdict: pass" in capsys.readouterr().out

    bad_cfg = tmp_path / "bad.json"
    bad_cfg.write_text(demo_config(tmp_path / "bad", T_end=8.0,
                                   speed_rel_tol=1e-6).to_json())
    assert main(["verify", "--config", str(bad_cfg)]) == 1
    assert "FAIL" in capsys.readouterr().out
