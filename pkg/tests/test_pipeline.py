import json
import shutil

import numpy as np
import pandas as pd
import pytest
import yaml

from spillover.pipeline import (DEFAULT_CONFIG_TEXT, STAGES, MissingInputError, PipelineConfig,
                                StageError, completed_stages, default_config, run_pipeline)
from spillover.synthetic import ScenarioSpec, write_scenario

UP_TO_REGRESSION = ["ingest", "damage", "mobility", "covariates", "regression"]


def _report(root):
    return json.loads((root / "regression" / "regression_report.json").read_text())


def test_all_eight_stages_complete(pipeline_run):
    _, manifest = pipeline_run
    assert completed_stages(manifest) == STAGES
    assert manifest["stage_order"] == STAGES
    for entry in manifest["stages"].values():
        assert entry["inputs"] and entry["outputs"]


def test_closure_recovers_planted_coefficients(pipeline_run, scenario_truth):
    root, _ = pipeline_run
    slx = _report(root)["slx"]
    assert slx["effects"]["nc"]["direct"] == pytest.approx(scenario_truth["beta"], abs=1e-6)
    assert slx["effects"]["nc"]["indirect"] == pytest.approx(scenario_truth["theta"], abs=1e-6)
    assert slx["coefficients"]["const"]["coef"] == pytest.approx(scenario_truth["beta0"],
                                                                 abs=1e-6)


def test_intermediate_fields_match_truth(pipeline_run, scenario_truth):
    root, _ = pipeline_run
    truth = pd.DataFrame(scenario_truth["cbgs"]).set_index("cbg_id")
    rec = pd.read_csv(root / "mobility" / "recovery.csv", dtype={"cbg_id": str},
                      float_precision="round_trip").set_index("cbg_id")
    dmg = pd.read_csv(root / "damage" / "cbg_damage.csv", dtype={"cbg_id": str}).set_index("cbg_id")
    assert rec.loc[truth.index, "rr"].tolist() == truth["rr"].tolist()
    assert dmg.loc[truth.index, "nc"].tolist() == truth["nc"].tolist()


def test_oracle_report_is_clean(pipeline_run):
    root, _ = pipeline_run
    report = json.loads((root / "regression" / "oracle_report.json").read_text())
    assert set(report) >= {"ols_normal_equations", "moran_double_sum", "dense_lag"}
    assert all(v["max_abs_deviation"] <= 1e-10 for v in report.values())


def test_decay_and_heterogeneity_artifacts(pipeline_run):
    root, _ = pipeline_run
    decay = json.loads((root / "decay" / "decay.json").read_text())
    assert decay["identity_residual"] <= 1e-12
    table = pd.read_csv(root / "decay" / "decay.csv", dtype={"cbg_id": str},
                        keep_default_na=False)
    assert ((table["k"] != "") | (table["excluded_reason"] != "")).all()
    het = json.loads((root / "heterogeneity" / "heterogeneity.json").read_text())
    assert set(het) == {"poi", "rd"}


def test_rerun_skips_and_keeps_hashes(scenario_dir, tmp_path):
    cfg = PipelineConfig.load(scenario_dir / "config.yaml")
    first = run_pipeline(cfg, stages=UP_TO_REGRESSION, output_dir=tmp_path)
    stamp = (tmp_path / "regression" / "frame.csv").stat().st_mtime_ns
    second = run_pipeline(cfg, stages=UP_TO_REGRESSION, output_dir=tmp_path)
    assert first["stages"] == second["stages"]
    assert (tmp_path / "regression" / "frame.csv").stat().st_mtime_ns == stamp


def test_config_change_reruns_only_affected_stages(scenario_dir, tmp_path):
    cfg = PipelineConfig.load(scenario_dir / "config.yaml")
    run_pipeline(cfg, stages=UP_TO_REGRESSION, output_dir=tmp_path)
    stamp = (tmp_path / "damage" / "cbg_damage.csv").stat().st_mtime_ns
    cfg.set("report.stars", "strict")
    cfg.set("regression.permutations", 99)
    run_pipeline(cfg, stages=UP_TO_REGRESSION, output_dir=tmp_path)
    assert (tmp_path / "damage" / "cbg_damage.csv").stat().st_mtime_ns == stamp
    assert _report(tmp_path)["star_convention"] == "strict"


def test_missing_stops_aborts_with_named_input(scenario_dir, tmp_path):
    data = tmp_path / "data"
    shutil.copytree(scenario_dir, data)
    cfg = PipelineConfig.load(data / "config.yaml")
    out = tmp_path / "out"
    run_pipeline(cfg, stages=["damage"], output_dir=out)
    before = (out / "damage" / "cbg_damage.csv").read_bytes()
    (data / "stops.csv").unlink()
    with pytest.raises(MissingInputError, match="stops"):
        run_pipeline(cfg, stages=["mobility"], output_dir=out)
    assert (out / "damage" / "cbg_damage.csv").read_bytes() == before
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["stages"]["mobility"]["status"] == "failed"
    assert manifest["stages"]["damage"]["status"] == "completed"


def test_missing_upstream_artifact_is_named(scenario_dir, tmp_path):
    cfg = PipelineConfig.load(scenario_dir / "config.yaml")
    with pytest.raises(MissingInputError, match="regression/design.csv"):
        run_pipeline(cfg, stages=["decay"], output_dir=tmp_path)


def test_estimator_errors_become_stage_errors(scenario_dir, tmp_path):
    cfg = PipelineConfig.load(scenario_dir / "config.yaml")
    cfg.set("regression.damage_features", ["nc", "nc"])
    with pytest.raises(StageError, match="regression"):
        run_pipeline(cfg, stages=UP_TO_REGRESSION, output_dir=tmp_path)


@pytest.mark.parametrize("sigma, tol", [(0.0, 1e-6), (0.01, 0.05), (0.1, 0.5)])
def test_estimates_converge_as_noise_vanishes(tmp_path, sigma, tol):
    spec = ScenarioSpec(seed=0, sigma=sigma)
    write_scenario(spec, tmp_path)
    cfg = PipelineConfig.load(tmp_path / "config.yaml")
    run_pipeline(cfg, stages=UP_TO_REGRESSION, output_dir=tmp_path / "out")
    slx = _report(tmp_path / "out")["slx"]
    assert abs(slx["effects"]["nc"]["direct"] - spec.beta) <= tol
    assert abs(slx["effects"]["nc"]["indirect"] - spec.theta) <= tol
    assert abs(slx["coefficients"]["const"]["coef"] - spec.beta0) <= tol


def test_default_config_text_parses_to_defaults():
    assert yaml.safe_load(DEFAULT_CONFIG_TEXT) == default_config()
    cfg = PipelineConfig()
    assert cfg.get("sweep.step") == 0.1
    assert cfg.get("mobility.steady_tol") == 0.1
    assert cfg.get("no.such.key", "x") == "x"


@pytest.mark.parametrize("key, value", [
    ("mobility.event_window", ["2017-08-01", "2017-08-10"]),
    ("sweep.step", 0.0),
    ("mobility.steady_tol", -1.0),
])
def test_invalid_config_rejected(key, value):
    cfg = PipelineConfig()
    cfg.set(key, value)
    with pytest.raises(ValueError):
        cfg.validate()


def test_unknown_stage_rejected(scenario_dir, tmp_path):
    cfg = PipelineConfig.load(scenario_dir / "config.yaml")
    with pytest.raises(ValueError, match="unknown stage"):
        run_pipeline(cfg, stages=["bogus"], output_dir=tmp_path)
