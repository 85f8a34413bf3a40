"""
Tests for the command-line interface.
"""

import csv
import json

import pytest
import yaml
from click.testing import CliRunner

from walsh_snapping import __version__
from walsh_snapping.main import (
    EXIT_CONFIGURATION_ERROR,
    EXIT_GATE_FAILURE,
    EXIT_INTERNAL_ERROR,
    EXIT_PASS,
    cli,
)


@pytest.fixture
def runner():
    return CliRunner()


def _config_file(tmp_path, experiments):
    path = tmp_path / "experiments.yaml"
    path.write_text(yaml.safe_dump({"experiments": experiments}))
    return str(path)


def _estimates(path):
    rows = csv.DictReader(path.read_text().splitlines()[1:])
    return [row["estimate"] for row in rows]


class TestCli:
    """Test the click command group."""

    def test_version(self, runner):
        result = runner.invoke(cli, ["--version"], obj={})
        assert result.exit_code == EXIT_PASS
        assert __version__ in result.output

    def test_help_without_command(self, runner):
        result = runner.invoke(cli, [], obj={})
        assert result.exit_code == EXIT_PASS
        assert "run" in result.output
        assert "accept" in result.output

    def test_list(self, runner):
        result = runner.invoke(cli, ["list"], obj={})
        assert result.exit_code == EXIT_PASS
        assert "hitting:" in result.output
        assert "kernels:" in result.output
        assert "gate:" in result.output

    def test_run_passing(self, runner, tmp_path):
        out = tmp_path / "out"
        path = _config_file(tmp_path, [{"id": "feller"}])
        result = runner.invoke(cli, ["--output-dir", str(out), "run", path], obj={})
        assert result.exit_code == EXIT_PASS
        assert "feller" in result.output
        summary = json.loads((out / "summary.json").read_text())
        assert summary["metrics"]["status_counts"]["pass"] == 1

    def test_run_configuration_error(self, runner, tmp_path):
        path = _config_file(tmp_path, [{"id": "hitting", "simulation": {"dt": -1.0}}])
        result = runner.invoke(cli, ["--output-dir", str(tmp_path), "run", path], obj={})
        assert result.exit_code == EXIT_CONFIGURATION_ERROR
        assert "Configuration error" in result.output

    def test_run_empty_config(self, runner, tmp_path):
        path = _config_file(tmp_path, [])
        result = runner.invoke(cli, ["run", path], obj={})
        assert result.exit_code == EXIT_CONFIGURATION_ERROR

    def test_run_missing_file(self, runner, tmp_path):
        result = runner.invoke(cli, ["run", str(tmp_path / "absent.yaml")], obj={})
        assert result.exit_code == 2

    def test_seed_override(self, runner, tmp_path):
        path = _config_file(tmp_path, [{"id": "hitting", "simulation": {"n_paths": 50, "horizon": 2.0}}])
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out, seed in ((a, "1"), (b, "2")):
            runner.invoke(cli, ["--output-dir", str(out), "--seed", seed, "run", path], obj={})
        assert _estimates(a / "hitting.csv") != _estimates(b / "hitting.csv")

    def test_internal_error(self, runner, tmp_path, monkeypatch):
        from walsh_snapping import main

        def explode(*args, **kwargs):
            raise RuntimeError("disk on fire")

        monkeypatch.setattr(main, "run_all", explode)
        path = _config_file(tmp_path, [{"id": "feller"}])
        result = runner.invoke(cli, ["run", path], obj={})
        assert result.exit_code == EXIT_INTERNAL_ERROR

    def test_errored_experiment_exit_code(self, runner, tmp_path, monkeypatch):
        from walsh_snapping.harness import REGISTRY, Experiment

        def boom(cfg):
            raise RuntimeError("boom")

        monkeypatch.setitem(REGISTRY, "feller", Experiment("feller", "broken", (), boom))
        path = _config_file(tmp_path, [{"id": "feller"}])
        result = runner.invoke(cli, ["--output-dir", str(tmp_path), "run", path], obj={})
        assert result.exit_code == EXIT_INTERNAL_ERROR
        assert "ERROR" in result.output

    def test_failed_gate_exit_code(self, runner, tmp_path, monkeypatch):
        from walsh_snapping.harness import REGISTRY, Experiment, ExperimentOutput

        def failing(cfg):
            out = ExperimentOutput()
            out.add(cfg.id, "always_wrong", 1.0, oracle=0.0, passed=False)
            return out

        monkeypatch.setitem(REGISTRY, "feller", Experiment("feller", "failing", (), failing))
        path = _config_file(tmp_path, [{"id": "feller"}])
        result = runner.invoke(cli, ["--output-dir", str(tmp_path), "run", path], obj={})
        assert result.exit_code == EXIT_GATE_FAILURE
        assert "FAIL always_wrong" in result.output

    def test_accept_with_config(self, runner, tmp_path):
        path = _config_file(tmp_path, [{"id": "feller"}])
        result = runner.invoke(cli, ["--output-dir", str(tmp_path), "accept", path], obj={})
        assert result.exit_code == EXIT_PASS
        assert (tmp_path / "feller.csv").exists()

    def test_run_default_config_missing(self, runner, tmp_path):
        with runner.isolated_filesystem(temp_dir=tmp_path):
            result = runner.invoke(cli, ["run"], obj={})
        assert result.exit_code == EXIT_CONFIGURATION_ERROR
        assert "not found" in result.output
