"""
Exécutions complètes du catalogue d'expériences avec les profils par défaut.

Longues : sélectionnées avec `pytest -m slow`.
"""

import json

import pytest

from src.harness.experiments import run_experiment
from src.utils.config_manager import EXPERIMENT_IDS, ConfigManager


def run(experiment, tmp_path, workers=2):
    manager = ConfigManager(experiment=experiment)
    manager.apply_overrides({"output.dir": str(tmp_path), "run.workers": workers})
    return run_experiment(manager)


@pytest.mark.slow
@pytest.mark.parametrize("experiment", EXPERIMENT_IDS)
def test_experiment_passes(experiment, tmp_path):
    report = run(experiment, tmp_path)
    failed = {name: c.to_dict() for name, c in report.criteria.items() if not c.passed}
    assert report.passed, failed
    written = json.loads((tmp_path / experiment / "report.json").read_text(encoding="utf-8"))
    assert written["passed"] is True
    assert (tmp_path / experiment / "timing.json").exists()


@pytest.mark.slow
def test_report_independent_of_workers(tmp_path):
    serial = run("E2", tmp_path / "serial", workers=1)
    parallel = run("E2", tmp_path / "parallel", workers=4)
    assert serial.metrics == parallel.metrics
    assert serial.criteria["total_variation"].value == parallel.criteria["total_variation"].value
