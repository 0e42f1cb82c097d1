"""
Tests du harnais : rapports déterministes, exports CSV, pool de répliques et CLI.
"""

import json
import math
import threading

import numpy as np
import pytest

from src.core.lattice import EnsembleData, make_grid
from src.core.mcmc import ChainState
from src.harness.experiments import _split, run_experiment
from src.harness.replica_pool import ReplicaPool
from src.harness.reporting import (
    ExperimentReport,
    export_paths,
    export_rows,
    jsonable,
    nondecreasing_within,
    nonincreasing_within,
    read_paths,
    strictly_decreasing_within,
)
from src.main import EXIT_CONFIG, EXIT_PASS, main
from src.utils.config_manager import ConfigManager
from src.utils.errors import ConfigError, DomainError
from src.utils.logger import LOG_DIR_ENV, get_logger


class TestReport:

    def test_e1_report_is_byte_identical(self, tmp_path):
        contents = []
        for _ in range(2):
            manager = ConfigManager(experiment="E1")
            manager.set("output.dir", str(tmp_path))
            report = run_experiment(manager)
            assert report.passed
            contents.append((tmp_path / "E1" / "report.json").read_bytes())
        assert contents[0] == contents[1]
        assert (tmp_path / "E1" / "timing.json").exists()
        assert (tmp_path / "E1" / "distribution.json").exists()
        assert b"wall_clock" not in contents[0]

    def test_debug_checks_recorded(self, tmp_path):
        manager = ConfigManager(experiment="E1")
        manager.apply_overrides({"output.dir": str(tmp_path), "general.debug_checks": True})
        report = run_experiment(manager)
        checks = report.metrics["hamiltonian_checks"]
        assert checks["nonnegative"] and checks["convex"]
        written = json.loads((tmp_path / "E1" / "report.json").read_text(encoding="utf-8"))
        assert written["metrics"]["hamiltonian_checks"]["name"] == "exponential:1.0"

    def test_report_verdicts(self):
        report = ExperimentReport("E0", 1, {})
        assert not report.passed
        report.add("a", True, 1.0, 2.0)
        assert report.passed
        report.add("b", False, math.inf, 1.0)
        data = report.to_dict()
        assert data["passed"] is False
        assert data["criteria"]["b"]["value"] == "inf"

    def test_jsonable(self):
        value = jsonable({"x": np.float64(-np.inf), "y": np.int64(3), "z": (np.bool_(True), math.nan)})
        assert value == {"x": "-inf", "y": 3, "z": [True, "nan"]}


class TestExports:

    def test_paths_with_boundaries(self, small_instance, tmp_path):
        state = ChainState.from_data(small_instance).snapshot()
        target = tmp_path / "paths.csv"
        assert export_paths([state], target, include_boundaries=True) == 5
        lines = target.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "time,f,curve_1,g"
        assert lines[1].split(",")[1] == "inf"
        blocks = read_paths(target)
        assert len(blocks) == 1
        np.testing.assert_allclose(blocks[0]["curve_1"], state.values()[0])
        assert np.all(blocks[0]["f"] == np.inf)

    def test_multiple_states_round_trip(self, tmp_path):
        data = EnsembleData.build(make_grid(0.0, 1.0, 2), [0, -1], [0, -1], "inf", "-inf")
        state = ChainState.from_data(data).snapshot()
        target = tmp_path / "two.csv"
        assert export_paths([state, state, state], target) == 15
        blocks = read_paths(target)
        assert len(blocks) == 3
        assert set(blocks[0]) == {"time", "curve_1", "curve_2"}

    def test_rows(self, tmp_path):
        target = tmp_path / "rows.csv"
        export_rows([{"w": 100.0, "ratio": 0.1}, {"w": 1000.0, "ratio": -math.inf}], target)
        assert target.read_text(encoding="utf-8").splitlines() == ["w,ratio", "100.0,0.1", "1000.0,-inf"]
        with pytest.raises(DomainError):
            export_rows([], target)


class TestTrends:

    def test_nonincreasing(self):
        assert nonincreasing_within([1.0, 1.05, 0.9], [0.1, 0.1, 0.1])
        assert not nonincreasing_within([1.0, 2.0], [0.1, 0.1])
        assert nondecreasing_within([0.5, 0.48, 0.9], [0.02, 0.02, 0.02])

    def test_strictly_decreasing(self):
        assert strictly_decreasing_within([0.5, 0.3, 0.1], [0.01, 0.01, 0.01])
        assert not strictly_decreasing_within([0.5, 0.5], [0.0, 0.0])
        assert not strictly_decreasing_within([0.5, 0.9, 0.1], [0.01, 0.01, 0.01])


class TestBatchSetting:

    def final_estimate(self, tmp_path, batch):
        manager = ConfigManager(experiment="E5")
        manager.apply_overrides({
            "output.dir": str(tmp_path),
            "monte_carlo.batch": batch,
            "normalization.samples": 200,
            "normalization.j_max": 3,
            "normalization.quadrature_points": 32,
        })
        return run_experiment(manager, write=False).criteria["final_estimate"].value

    def test_batch_reaches_estimators(self, tmp_path):
        first = self.final_estimate(tmp_path, 50)
        assert self.final_estimate(tmp_path, 50) == first
        # Le découpage en lots fixe l'ordre des tirages
        assert self.final_estimate(tmp_path, 200) != first

    @pytest.mark.parametrize("batch", [0, -5, 2.5])
    def test_invalid_batch(self, batch):
        manager = ConfigManager(experiment="E5")
        manager.set("monte_carlo.batch", batch)
        with pytest.raises(ConfigError):
            run_experiment(manager, write=False)


class TestReplicaPool:

    def test_order_is_preserved(self):
        pool = ReplicaPool(4)
        assert pool.map(lambda i: i * i, range(20)) == [i * i for i in range(20)]
        assert not pool.is_running

    def test_uses_threads(self):
        names = set()
        lock = threading.Lock()
        barrier = threading.Barrier(3, timeout=10)

        def task(i):
            with lock:
                names.add(threading.current_thread().name)
            barrier.wait()
            return i

        assert ReplicaPool(3).map(task, [0, 1, 2]) == [0, 1, 2]
        assert len(names) == 3

    def test_error_is_reraised(self):
        def task(i):
            if i == 5:
                raise DomainError("réplique 5")
            return i

        with pytest.raises(DomainError):
            ReplicaPool(3).map(task, range(10))
        with pytest.raises(DomainError):
            ReplicaPool(1).map(task, range(10))

    def test_log_lines_name_the_worker(self, tmp_path):
        logger = get_logger()
        previous = logger.log_dir
        logger.set_log_dir(tmp_path)
        try:
            ReplicaPool(2).map(lambda i: logger.info(f"réplique {i} terminée"), range(4))
        finally:
            logger.set_log_dir(previous)
        lines = (tmp_path / "gibbs_lines.log").read_text(encoding="utf-8").splitlines()
        done = [line for line in lines if "terminée" in line]
        assert len(done) == 4
        assert all("] [replica-" in line for line in done)

    def test_split_independent_of_workers(self):
        assert _split(10, 4) == [3, 3, 2, 2]
        assert _split(2, 4) == [1, 1]
        assert sum(_split(100_000, 8)) == 100_000


class TestCli:

    def test_hamiltonian_command(self, tmp_path, capsys):
        target = tmp_path / "ham.json"
        assert main(["hamiltonian", "exponential:1.0", "--out", str(target)]) == EXIT_PASS
        assert json.loads(target.read_text(encoding="utf-8"))["passed"] is True

    def test_unknown_hamiltonian(self):
        assert main(["hamiltonian", "cosh"]) == EXIT_CONFIG

    def test_run_e1(self, tmp_path, capsys):
        assert main(["run", "E1", "--out", str(tmp_path), "--seed", "3"]) == EXIT_PASS
        verdict = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert verdict == {"experiment": "E1", "passed": True}
        assert json.loads((tmp_path / "E1" / "report.json").read_text(encoding="utf-8"))["seed"] == 3

    def test_missing_config(self, tmp_path):
        assert main(["run", "E1", "--config", str(tmp_path / "absent.toml")]) == EXIT_CONFIG

    def test_sample_command(self, tmp_path):
        assert main(["sample", "--samples", "25", "--out", str(tmp_path)]) == EXIT_PASS
        blocks = read_paths(tmp_path / "sample" / "data.csv")
        assert len(blocks) == 25

    def test_couple_command(self, tmp_path, capsys):
        code = main(["couple", "--events", "20000", "--out", str(tmp_path)])
        assert code == EXIT_PASS
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["violations"] == 0 and summary["samples"] == 20

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["--version"])
        assert info.value.code == 0
        assert "gibbs-lines" in capsys.readouterr().out

    def test_env_file_sets_log_dir(self, tmp_path, monkeypatch):
        monkeypatch.delenv(LOG_DIR_ENV, raising=False)
        monkeypatch.chdir(tmp_path)
        log_dir = tmp_path / "envlogs"
        (tmp_path / ".env").write_text(f"{LOG_DIR_ENV}={log_dir}\n", encoding="utf-8")
        logger = get_logger()
        previous = logger.log_dir
        try:
            assert main(["hamiltonian", "exponential:1.0"]) == EXIT_PASS
            assert logger.log_dir == log_dir
        finally:
            logger.set_log_dir(previous)
        log_file = log_dir / "gibbs_lines.log"
        assert log_file.exists()
        assert "commande 'hamiltonian'" in log_file.read_text(encoding="utf-8")
        assert not (tmp_path / "data" / "logs").exists()
