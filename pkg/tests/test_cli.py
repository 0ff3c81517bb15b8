import shutil

import pytest
import yaml

from spillover.cli import EXIT_OK, EXIT_STAGE, EXIT_VALIDATION, main


def test_default_config_prints_yaml(capsys):
    assert main(["default-config"]) == EXIT_OK
    assert "sweep" in yaml.safe_load(capsys.readouterr().out)


def test_synth_then_stage_commands(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["synth", "--output-dir", str(data), "--seed", "2", "--n-cbgs", "36"]) == EXIT_OK
    out = tmp_path / "out"
    common = ["--config", str(data / "config.yaml"), "--output-dir", str(out)]
    for cmd in ("ingest", "damage", "recovery", "covariates", "analyze"):
        assert main([cmd, *common]) == EXIT_OK
    assert (out / "regression" / "regression_report.json").exists()
    assert main(["report", *common]) == EXIT_OK
    assert (out / "report" / "table2.txt").exists()
    assert "completed stages" in capsys.readouterr().out


def test_missing_input_exits_with_stage_failure(scenario_dir, tmp_path, capsys):
    data = tmp_path / "data"
    shutil.copytree(scenario_dir, data)
    (data / "stops.csv").unlink()
    code = main(["recovery", "--config", str(data / "config.yaml"),
                 "--output-dir", str(tmp_path / "out")])
    assert code == EXIT_STAGE
    assert "stops" in capsys.readouterr().err


def test_invalid_configuration_exits_with_validation_code(scenario_dir, tmp_path, capsys):
    code = main(["ingest", "--config", str(scenario_dir / "config.yaml"),
                 "--output-dir", str(tmp_path), "--set", "sweep.step=0"])
    assert code == EXIT_VALIDATION
    assert "invalid configuration" in capsys.readouterr().err


def test_orphan_rows_fail_strict_ingest(scenario_dir, tmp_path):
    data = tmp_path / "data"
    shutil.copytree(scenario_dir, data)
    with open(data / "adjacency.csv", "a") as fh:
        fh.write("G0000,G0063\n")          # one-directional pair
    code = main(["ingest", "--config", str(data / "config.yaml"),
                 "--output-dir", str(tmp_path / "out")])
    assert code == EXIT_VALIDATION
    code = main(["ingest", "--config", str(data / "config.yaml"), "--no-resume",
                 "--output-dir", str(tmp_path / "out"), "--set", "ingest.strict=false"])
    assert code == EXIT_OK


def test_bad_set_syntax_is_a_validation_error(tmp_path):
    assert main(["ingest", "--output-dir", str(tmp_path), "--set", "novalue"]) == EXIT_VALIDATION


def test_unknown_subcommand_exits_nonzero():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code != 0
