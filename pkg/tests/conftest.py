"""Shared fixtures: one synthetic scenario run end to end per session."""
from __future__ import annotations

import numpy as np
import pytest

from spillover.pipeline import PipelineConfig, run_pipeline
from spillover.synthetic import ScenarioSpec, write_scenario


@pytest.fixture(scope="session")
def scenario_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("scenario")
    write_scenario(ScenarioSpec(seed=0), root)
    return root


@pytest.fixture(scope="session")
def scenario_truth(scenario_dir):
    import json

    return json.loads((scenario_dir / "truth.json").read_text())


@pytest.fixture(scope="session")
def pipeline_run(scenario_dir, tmp_path_factory):
    """(artifact directory, manifest) of a full run on the default scenario."""
    out = tmp_path_factory.mktemp("artifacts")
    cfg = PipelineConfig.load(scenario_dir / "config.yaml")
    manifest = run_pipeline(cfg, output_dir=out)
    return out, manifest


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
