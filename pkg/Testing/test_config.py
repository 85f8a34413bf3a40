"""
Tests for configuration loading, registry defaults and overrides.
"""

import math
from pathlib import Path

import pytest
import yaml

from walsh_snapping.config import (
    EXPERIMENT_DEFAULTS,
    STOCHASTIC_EXPERIMENTS,
    Config,
    ConfigurationError,
    ExperimentConfig,
    MeasureConfig,
    ProfileConfig,
    ProfileFamilyConfig,
    build_config,
    default_config,
    load_config,
    parse_config,
    serialize_config,
    substitute_variables,
)
from walsh_snapping.domain import resistance


def _write(tmp_path, data, name="experiments.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


class TestModels:
    """Test the pydantic models."""

    def test_measure(self):
        assert MeasureConfig().build().n_rays == 4
        assert MeasureConfig(n_rays=3, weights=[0.5, 0.3, 0.2]).build().weights == (0.5, 0.3, 0.2)
        with pytest.raises(ValueError):
            MeasureConfig(n_rays=3, weights=[0.5, 0.5])
        with pytest.raises(ValueError):
            MeasureConfig(n_rays=1)

    def test_profile_forms(self):
        explicit = ProfileConfig(epsilon=0.1, values=[0.5])
        assert resistance(explicit.build()) == pytest.approx(0.2)
        power = ProfileConfig(epsilon=0.01, kappa=2.0, alpha=-1.0)
        assert resistance(power.build()) == pytest.approx(0.5)
        with pytest.raises(ValueError):
            ProfileConfig(epsilon=0.1, values=[0.5], kappa=1.0, alpha=-1.0)
        with pytest.raises(ValueError):
            ProfileConfig(epsilon=0.1)

    def test_family(self):
        family = ProfileFamilyConfig(alpha=-1.0, epsilons=[0.1, 0.05])
        assert [p.epsilon for p in family.build()] == [0.1, 0.05]
        with pytest.raises(ValueError):
            ProfileFamilyConfig(alpha=-1.0, epsilons=[0.05, 0.1])

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValueError):
            MeasureConfig(n_rays=3, colour="red")

    def test_unknown_experiment(self):
        with pytest.raises(ValueError):
            ExperimentConfig(id="nope")

    def test_stochastic_needs_seed(self):
        with pytest.raises(ValueError):
            ExperimentConfig(id="hitting", r=0.3, a=1.0)

    def test_lambda_alias(self):
        cfg = ExperimentConfig(id="feller", a=1.0, **{"lambda": 2.0})
        assert cfg.lambda_ == 2.0
        assert ExperimentConfig(id="feller", lambda_=3.0).lambda_ == 3.0

    def test_log_level(self):
        assert Config(log_level="debug").log_level == "DEBUG"
        with pytest.raises(ValueError):
            Config(log_level="LOUD")


class TestRegistryDefaults:
    """Test the default configuration of every experiment."""

    def test_all_defaults_validate(self):
        config = default_config()
        assert [e.id for e in config.experiments] == list(EXPERIMENT_DEFAULTS)

    def test_stochastic_defaults_seeded(self):
        for cfg in default_config().experiments:
            assert cfg.is_stochastic == (cfg.id in STOCHASTIC_EXPERIMENTS)
            if cfg.is_stochastic:
                assert cfg.simulation.seed == 42

    def test_deterministic_experiments(self):
        assert {"feller", "phase-sweep", "gamma-continuity", "recovery", "kernels"}.isdisjoint(
            STOCHASTIC_EXPERIMENTS
        )

    def test_entry_overrides_default(self):
        config = build_config({"experiments": [{"id": "hitting", "r": 0.5, "simulation": {"n_paths": 10}}]})
        cfg = config.experiments[0]
        assert cfg.r == 0.5
        assert cfg.a == 1.0
        assert cfg.simulation.n_paths == 10
        assert cfg.simulation.seed == 42

    def test_validation_error_becomes_configuration_error(self):
        with pytest.raises(ConfigurationError, match="simulation"):
            build_config({"experiments": [{"id": "hitting", "simulation": {"dt": -1.0}}]})


class TestLoadConfig:
    """Test loading from files, the environment and overrides."""

    def test_from_file(self, tmp_path):
        path = _write(tmp_path, {"log_level": "WARNING", "experiments": [{"id": "feller", "a": 2.0}]})
        config = load_config(path)
        assert config.log_level == "WARNING"
        assert config.experiments[0].a == 2.0
        assert config.experiments[0].lambdas == EXPERIMENT_DEFAULTS["feller"]["lambdas"]

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_config(str(tmp_path / "absent.yaml"))

    def test_bad_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("experiments: [\n")
        with pytest.raises(ConfigurationError):
            load_config(str(path))

    def test_non_mapping(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigurationError):
            load_config(str(path))

    def test_default_ids(self):
        config = load_config(default_ids=["feller", "kernels"])
        assert [e.id for e in config.experiments] == ["feller", "kernels"]

    def test_variable_substitution(self, tmp_path, monkeypatch):
        monkeypatch.setenv("RESULTS_ROOT", str(tmp_path))
        path = _write(tmp_path, {"experiments": [{"id": "feller", "output": {"directory": "${RESULTS_ROOT}/out"}}]})
        config = load_config(path)
        assert config.experiments[0].output.directory == f"{tmp_path}/out"

    def test_environment_overrides(self, tmp_path, monkeypatch):
        monkeypatch.setenv("WALSH_OUTPUT_DIR", str(tmp_path / "env"))
        monkeypatch.setenv("WALSH_LOG_LEVEL", "ERROR")
        monkeypatch.setenv("WALSH_SEED", "7")
        config = load_config(default_ids=["hitting", "feller"])
        assert config.log_level == "ERROR"
        assert all(e.output.directory == str(tmp_path / "env") for e in config.experiments)
        assert config.experiments[0].simulation.seed == 7
        assert config.experiments[1].simulation is None

    def test_bad_environment_seed(self, monkeypatch):
        monkeypatch.setenv("WALSH_SEED", "many")
        with pytest.raises(ConfigurationError):
            load_config(default_ids=["hitting"])

    def test_cli_overrides_win(self, tmp_path, monkeypatch):
        monkeypatch.setenv("WALSH_SEED", "7")
        config = load_config(
            default_ids=["hitting"],
            overrides={"seed": 11, "output_dir": tmp_path / "cli", "log_level": "DEBUG"},
        )
        cfg = config.experiments[0]
        assert cfg.simulation.seed == 11
        assert cfg.output.directory == str(tmp_path / "cli")
        assert config.log_level == "DEBUG"


class TestSerialisation:
    """Test the YAML form of a configuration."""

    def test_roundtrip(self):
        config = default_config(["feller", "gamma-continuity", "phase-sweep"])
        assert parse_config(serialize_config(config)) == config

    def test_infinite_limit(self):
        config = build_config({"experiments": [{"id": "gamma-continuity", "gamma_limit": math.inf}]})
        text = serialize_config(config)
        assert ".inf" in text
        assert math.isinf(parse_config(text).experiments[0].gamma_limit)

    def test_parse_errors(self):
        with pytest.raises(ConfigurationError):
            parse_config("experiments: [")
        with pytest.raises(ConfigurationError):
            parse_config("experiments:\n  - id: nope\n")


class TestSubstituteVariables:
    """Test environment variable substitution."""

    def test_nested(self, monkeypatch):
        monkeypatch.setenv("A_VALUE", "x")
        data = {"a": "${A_VALUE}", "b": ["${A_VALUE}-y", 3]}
        assert substitute_variables(data) == {"a": "x", "b": ["x-y", 3]}

    def test_default_used_when_unset(self, monkeypatch):
        monkeypatch.delenv("UNSET_VALUE_123", raising=False)
        assert substitute_variables({"d": "${UNSET_VALUE_123:-results}/hitting"}) == {"d": "results/hitting"}

    def test_environment_beats_default(self, monkeypatch):
        monkeypatch.setenv("A_VALUE", "/data")
        assert substitute_variables("${A_VALUE:-results}") == "/data"

    def test_unset_without_default_names_key(self, monkeypatch):
        monkeypatch.delenv("UNSET_VALUE_123", raising=False)
        data = {"experiments": [{"output": {"directory": "${UNSET_VALUE_123}"}}]}
        with pytest.raises(ConfigurationError, match=r"experiments\[0\]\.output\.directory.*UNSET_VALUE_123"):
            substitute_variables(data)

    def test_numeric_field_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("WALSH_TEST_PATHS", "123")
        path = tmp_path / "c.yaml"
        path.write_text('experiments:\n  - id: hitting\n    simulation:\n      n_paths: "${WALSH_TEST_PATHS}"\n')
        assert load_config(str(path)).experiments[0].simulation.n_paths == 123

    def test_example_config_uses_default_root(self):
        path = Path(__file__).resolve().parents[1] / "config" / "experiments.example.yaml"
        config = load_config(str(path))
        hitting = next(e for e in config.experiments if e.id == "hitting")
        assert hitting.output.directory == "results/hitting"


class TestShippedConfigs:
    """The configuration files under config/ load cleanly."""

    CONFIG_DIR = Path(__file__).resolve().parents[1] / "config"

    @pytest.mark.parametrize("name", ["experiments.yaml", "experiments.example.yaml"])
    def test_loads(self, name):
        config = load_config(str(self.CONFIG_DIR / name))
        assert config.experiments
        assert len({e.id for e in config.experiments}) == len(config.experiments)

    def test_example_covers_registry(self):
        config = load_config(str(self.CONFIG_DIR / "experiments.example.yaml"))
        assert [e.id for e in config.experiments] == list(EXPERIMENT_DEFAULTS)
