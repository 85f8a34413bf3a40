"""
Configuration management for the Walsh / snapping-out experiment harness.
"""

import copy
import math
import os
import re
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .domain import AngularMeasure, BarrierProfile, ConfigurationError, power_law_profile
from .grid import Grid


_REFERENCE = re.compile(r"\$\{(?P<name>[A-Za-z_][A-Za-z0-9_]*)(?::-(?P<default>[^}]*))?\}")


def substitute_variables(data: Any, path: str = "") -> Any:
    """
    Expand ${VAR} and ${VAR:-default} references in string values.

    An unset variable without a default is an error naming the key path.
    Values stay strings; pydantic coerces them where a field is numeric.
    """
    if isinstance(data, str):
        def expand(match: "re.Match[str]") -> str:
            value = os.getenv(match.group("name"))
            if value is None:
                value = match.group("default")
            if value is None:
                name = match.group("name")
                raise ConfigurationError(f"{path or '<root>'}: environment variable {name} is not set")
            return value

        return _REFERENCE.sub(expand, data)
    if isinstance(data, dict):
        return {key: substitute_variables(value, f"{path}.{key}" if path else str(key))
                for key, value in data.items()}
    if isinstance(data, list):
        return [substitute_variables(item, f"{path}[{index}]") for index, item in enumerate(data)]
    return data


class MeasureConfig(BaseModel):
    """Angular measure on the rays."""

    model_config = ConfigDict(extra="forbid")

    n_rays: int = Field(4, description="Number of rays M")
    weights: Optional[List[float]] = Field(None, description="Ray weights; uniform when omitted")

    @field_validator('n_rays')
    def validate_n_rays(cls, v: int) -> int:
        if v < 2:
            raise ValueError("n_rays must be at least 2")
        return v

    @model_validator(mode='after')
    def validate_weights(self) -> "MeasureConfig":
        if self.weights is not None and len(self.weights) != self.n_rays:
            raise ValueError(f"weights has {len(self.weights)} entries for {self.n_rays} rays")
        return self

    def build(self) -> AngularMeasure:
        if self.weights is None:
            return AngularMeasure.uniform(self.n_rays)
        return AngularMeasure.from_weights(self.weights)


class ProfileConfig(BaseModel):
    """A single barrier: explicit pieces, or a power law (kappa epsilon)^-alpha."""

    model_config = ConfigDict(extra="forbid")

    epsilon: float = Field(..., description="Barrier width")
    breakpoints: Optional[List[float]] = Field(None, description="Piece boundaries from 0 to epsilon")
    values: Optional[List[float]] = Field(None, description="Conductivity on each piece")
    kappa: Optional[float] = Field(None, description="Power-law scale")
    alpha: Optional[float] = Field(None, description="Power-law exponent")

    @model_validator(mode='after')
    def validate_shape(self) -> "ProfileConfig":
        explicit = self.values is not None
        power = self.kappa is not None and self.alpha is not None
        if explicit == power:
            raise ValueError("Give either values (with optional breakpoints) or kappa and alpha")
        return self

    def build(self) -> BarrierProfile:
        if self.values is None:
            return power_law_profile(self.kappa, self.alpha, self.epsilon)
        breakpoints = self.breakpoints or [0.0, self.epsilon]
        return BarrierProfile(self.epsilon, tuple(breakpoints), tuple(self.values))


class ProfileFamilyConfig(BaseModel):
    """Power-law barriers along a decreasing sequence of widths."""

    model_config = ConfigDict(extra="forbid")

    kappa: float = Field(1.0, description="Power-law scale")
    alpha: float = Field(..., description="Power-law exponent")
    epsilons: List[float] = Field(..., description="Barrier widths, decreasing")
    gated: bool = Field(True, description="Whether the trend of this family is a pass/fail gate")
    r: Optional[float] = Field(None, description="Starting radius for walks; the experiment's r when omitted")

    @field_validator('r')
    def validate_start(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and not (v > 0.0 and math.isfinite(v)):
            raise ValueError("r must be positive")
        return v

    @field_validator('epsilons')
    def validate_epsilons(cls, v: List[float]) -> List[float]:
        if not v or any(e <= 0.0 for e in v):
            raise ValueError("epsilons must be a nonempty list of positive widths")
        if any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError("epsilons must be strictly decreasing")
        return v

    def build(self) -> List[BarrierProfile]:
        return [power_law_profile(self.kappa, self.alpha, e) for e in self.epsilons]


class SimulationConfig(BaseModel):
    """Monte Carlo parameters."""

    model_config = ConfigDict(extra="forbid")

    dt: float = Field(1e-3, description="Time step")
    horizon: float = Field(10.0, description="Simulated time horizon")
    n_paths: int = Field(10_000, description="Number of paths")
    seed: Optional[int] = Field(None, description="Master seed")
    batch_size: int = Field(8192, description="Paths per random stream")
    workers: int = Field(1, description="Worker threads")

    @field_validator('dt', 'horizon')
    def validate_positive(cls, v: float) -> float:
        if not (v > 0.0 and math.isfinite(v)):
            raise ValueError("must be positive and finite")
        return v

    @field_validator('n_paths', 'batch_size', 'workers')
    def validate_count(cls, v: int) -> int:
        if v <= 0:
            raise ValueError("must be positive")
        return v

    @field_validator('seed')
    def validate_seed(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and not 0 <= v < 2**64:
            raise ValueError("seed must lie in [0, 2**64)")
        return v


class GridConfig(BaseModel):
    """Radial grid; the number of rays comes from the measure."""

    model_config = ConfigDict(extra="forbid")

    h: float = Field(5e-4, description="Grid spacing")
    length: float = Field(1.0, description="Truncation length L")

    @field_validator('h', 'length')
    def validate_positive(cls, v: float) -> float:
        if not (v > 0.0 and math.isfinite(v)):
            raise ValueError("must be positive and finite")
        return v

    def build(self, n_rays: int) -> Grid:
        return Grid.covering(n_rays, self.length, self.h)


class OutputConfig(BaseModel):
    """Where results go."""

    model_config = ConfigDict(extra="forbid")

    directory: str = Field("results", description="Output directory")
    write_records: bool = Field(False, description="Also write per-path exit records")


class ExperimentConfig(BaseModel):
    """One experiment: its id plus the parameters its runner reads."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    id: str = Field(..., description="Experiment id from the registry")
    measure: MeasureConfig = Field(default_factory=MeasureConfig)
    profile: Optional[ProfileConfig] = Field(None, description="Single barrier")
    families: Optional[List[ProfileFamilyConfig]] = Field(None, description="Barrier families for sweeps")
    kappa: Optional[float] = Field(None, description="Snapping rate")
    kappas: Optional[List[float]] = Field(None, description="Snapping rates to repeat a check over")
    a: Optional[float] = Field(None, description="Ball or trace radius")
    r: Optional[float] = Field(None, description="Starting radius")
    outer_radius: Optional[float] = Field(None, description="Target radius R")
    lambda_: Optional[float] = Field(None, alias="lambda", description="Resolvent or Laplace parameter")
    lambdas: Optional[List[float]] = Field(None, description="Parameters of a lambda sweep")
    gammas: Optional[List[float]] = Field(None, description="Resistances of a continuity sweep")
    gamma_limit: Optional[float] = Field(None, description="Limiting resistance; .inf for reflecting")
    record_time: Optional[float] = Field(None, description="Time at which states are compared")
    grid_hs: Optional[List[float]] = Field(None, description="Grid spacings of a refinement study")
    simulation: Optional[SimulationConfig] = Field(None, description="Monte Carlo parameters")
    grid: Optional[GridConfig] = Field(None, description="Grid parameters")
    output: OutputConfig = Field(default_factory=OutputConfig)

    @field_validator('id')
    def validate_id(cls, v: str) -> str:
        if v not in EXPERIMENT_DEFAULTS:
            raise ValueError(f"Unknown experiment id {v!r}, must be one of {list(EXPERIMENT_DEFAULTS)}")
        return v

    @field_validator('kappa', 'a', 'r', 'outer_radius', 'lambda_', 'record_time')
    def validate_nonnegative(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and (v < 0.0 or math.isnan(v)):
            raise ValueError("must be nonnegative")
        return v

    @model_validator(mode='after')
    def validate_seeded(self) -> "ExperimentConfig":
        if self.id in STOCHASTIC_EXPERIMENTS:
            if self.simulation is None or self.simulation.seed is None:
                raise ValueError(f"Experiment {self.id!r} is stochastic and needs simulation.seed")
        return self

    @property
    def is_stochastic(self) -> bool:
        return self.id in STOCHASTIC_EXPERIMENTS


class Config(BaseModel):
    """Main configuration class."""

    model_config = ConfigDict(extra="forbid")

    experiments: List[ExperimentConfig] = Field(default_factory=list, description="Experiments to run")
    log_level: str = Field("INFO", description="Log level")

    @field_validator('log_level')
    def validate_log_level(cls, v: str) -> str:
        """Validate log level."""
        valid_levels = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        if v.upper() not in valid_levels:
            raise ValueError(f"Invalid log_level: {v}, must be one of {valid_levels}")
        return v.upper()


_SEED = 42

# Registry defaults, in listing order
EXPERIMENT_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "hitting": {
        "measure": {"n_rays": 4},
        "r": 0.3,
        "a": 1.0,
        "simulation": {"dt": 1e-3, "horizon": 50.0, "n_paths": 100_000, "seed": _SEED},
    },
    "laplace": {
        "r": 0.3,
        "a": 1.0,
        "lambda": 0.5,
        "simulation": {"dt": 1e-3, "horizon": 50.0, "n_paths": 1_000_000, "seed": _SEED},
    },
    "feller": {
        "a": 1.0,
        "lambdas": [1.0, 10.0, 100.0, 1000.0, 10000.0],
    },
    "snowb-rebirth": {
        "measure": {"n_rays": 4, "weights": [0.1, 0.2, 0.3, 0.4]},
        "kappa": 2.0,
        "simulation": {"dt": 1e-3, "horizon": 2.0, "n_paths": 4000, "seed": _SEED},
    },
    "local-time": {
        "kappa": 1.0,
        "record_time": 1.0,
        "grid_hs": [1e-3],
        "simulation": {"dt": 1e-3, "horizon": 1.0, "n_paths": 100_000, "seed": _SEED},
    },
    "trace-vs-snowb": {
        "measure": {"n_rays": 3, "weights": [0.5, 0.3, 0.2]},
        "a": 0.5,
        "kappa": 1.0,
        "r": 0.2,
        "outer_radius": 1.0,
        "simulation": {"dt": 1e-3, "horizon": 100.0, "n_paths": 100_000, "seed": _SEED},
    },
    "darning": {
        "measure": {"n_rays": 3, "weights": [0.5, 0.3, 0.2]},
        "kappas": [0.5, 1.0, 4.0],
        "record_time": 1.0,
        "simulation": {"dt": 1e-3, "horizon": 1.0, "n_paths": 100_000, "seed": _SEED},
    },
    "barrier-membrane": {
        "measure": {"n_rays": 3, "weights": [0.5, 0.3, 0.2]},
        "families": [
            {"kappa": 2.0, "alpha": -1.0, "epsilons": [0.04, 0.02, 0.01, 0.001]},
            {"kappa": 1.0, "alpha": -2.0, "epsilons": [0.1, 0.05, 0.025, 0.0125], "r": 0.1},
            {"kappa": 1.0, "alpha": 0.0, "epsilons": [0.1, 0.05, 0.025, 0.0125], "r": 0.1},
        ],
        "r": 0.5,
        "outer_radius": 1.0,
        "grid_hs": [0.01],
        "simulation": {"dt": 1e-3, "horizon": 1000.0, "n_paths": 100_000, "seed": _SEED},
    },
    "phase-sweep": {
        "measure": {"n_rays": 4},
        "families": [
            {"kappa": 1.0, "alpha": -1.0, "epsilons": [0.1, 0.05, 0.025, 0.0125]},
            {"kappa": 1.0, "alpha": -2.0, "epsilons": [0.1, 0.05, 0.025, 0.0125]},
            {"kappa": 1.0, "alpha": 0.0, "epsilons": [0.1, 0.05, 0.025, 0.0125]},
            {"kappa": 1.0, "alpha": -0.5, "epsilons": [0.1, 0.05, 0.025, 0.0125], "gated": False},
        ],
        "lambda": 1.0,
        "grid": {"h": 5e-4, "length": 1.0},
    },
    "gamma-continuity": {
        "measure": {"n_rays": 4},
        "gammas": [1.0 + 2.0**-n for n in range(1, 7)],
        "gamma_limit": 1.0,
        "kappa": 1e-6,
        "lambda": 1.0,
        "grid": {"h": 1e-3, "length": 1.0},
    },
    "recovery": {
        "measure": {"n_rays": 2},
        "profile": {"epsilon": 0.01, "values": [0.02]},
        "grid_hs": [4e-4, 2e-4, 1e-4],
        "grid": {"h": 1e-4, "length": 5.0},
    },
    "kernels": {
        "measure": {"n_rays": 4},
        "kappa": 1.0,
        "profile": {"epsilon": 0.1, "values": [0.5]},
        "grid": {"h": 0.01, "length": 9.99},
    },
}

STOCHASTIC_EXPERIMENTS = frozenset(
    key for key, value in EXPERIMENT_DEFAULTS.items() if "simulation" in value
)


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _validation_message(error: ValidationError) -> str:
    return "; ".join(
        f"{'.'.join(str(part) for part in item['loc'])}: {item['msg']}" for item in error.errors()
    )


def experiment_with_defaults(entry: Dict[str, Any]) -> Dict[str, Any]:
    """Overlay a raw experiment entry on the registry defaults of its id."""
    experiment_id = entry.get("id")
    defaults = EXPERIMENT_DEFAULTS.get(experiment_id, {})
    return _merge({"id": experiment_id, **defaults}, entry)


def default_config(ids: Optional[List[str]] = None) -> Config:
    """Config holding the registry defaults for `ids` (all experiments when omitted)."""
    ids = list(EXPERIMENT_DEFAULTS) if ids is None else ids
    return build_config({"experiments": [{"id": i} for i in ids]})


def build_config(config_data: Dict[str, Any]) -> Config:
    """Validate raw data, filling every experiment from the registry defaults."""
    config_data = dict(config_data or {})
    experiments = config_data.get("experiments") or []
    if not isinstance(experiments, list):
        raise ConfigurationError("experiments: must be a list")
    config_data["experiments"] = [
        experiment_with_defaults(e) if isinstance(e, dict) else e for e in experiments
    ]
    try:
        return Config(**config_data)
    except ValidationError as e:
        raise ConfigurationError(_validation_message(e)) from e


def _env_overrides(config_data: Dict[str, Any]) -> Dict[str, Any]:
    output_dir = os.getenv('WALSH_OUTPUT_DIR')
    log_level = os.getenv('WALSH_LOG_LEVEL')
    seed = os.getenv('WALSH_SEED')

    if log_level:
        config_data['log_level'] = log_level
    for entry in config_data.get('experiments') or []:
        if not isinstance(entry, dict):
            continue
        if output_dir:
            entry.setdefault('output', {})['directory'] = output_dir
        if seed and entry.get('id') in STOCHASTIC_EXPERIMENTS:
            try:
                entry.setdefault('simulation', {})['seed'] = int(seed)
            except ValueError as e:
                raise ConfigurationError(f"WALSH_SEED must be an integer, got {seed!r}") from e
    return config_data


def load_config(
    config_path: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None,
    default_ids: Optional[List[str]] = None,
) -> Config:
    """
    Load configuration from file and environment variables.

    Args:
        config_path: Path to a YAML (or JSON) configuration file
        overrides: Command-line values, applied last. Recognised keys are
            'output_dir', 'log_level' and 'seed'.
        default_ids: Experiments to run when no file is given

    Returns:
        Config: Loaded configuration
    """
    # Load environment variables
    load_dotenv()

    config_data: Dict[str, Any] = {}

    # Load from file if provided
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise ConfigurationError(f"Configuration file not found: {config_path}")
        try:
            config_data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigurationError(f"Cannot parse {config_path}: {e}") from e
        if not isinstance(config_data, dict):
            raise ConfigurationError(f"{config_path} must hold a mapping at top level")
    elif default_ids:
        config_data = {'experiments': [{'id': i} for i in default_ids]}

    # Registry defaults sit below the file values
    experiments = config_data.get('experiments') or []
    if isinstance(experiments, list):
        config_data['experiments'] = [
            experiment_with_defaults(e) if isinstance(e, dict) else e for e in experiments
        ]

    # Substitute environment variables in the configuration
    config_data = substitute_variables(config_data)

    # Override with environment variables
    config_data = _env_overrides(config_data)

    # Command-line flags win
    overrides = overrides or {}
    if overrides.get('log_level'):
        config_data['log_level'] = overrides['log_level']
    for entry in config_data.get('experiments') or []:
        if not isinstance(entry, dict):
            continue
        if overrides.get('output_dir'):
            entry.setdefault('output', {})['directory'] = str(overrides['output_dir'])
        if overrides.get('seed') is not None and entry.get('id') in STOCHASTIC_EXPERIMENTS:
            entry.setdefault('simulation', {})['seed'] = int(overrides['seed'])

    return build_config(config_data)


def serialize_config(config: Config) -> str:
    """YAML text that parse_config turns back into an equal Config."""
    data = config.model_dump(mode="python", by_alias=True, exclude_none=True)
    return yaml.safe_dump(data, sort_keys=False)


def parse_config(text: str) -> Config:
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Cannot parse configuration: {e}") from e
    try:
        return Config.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(_validation_message(e)) from e


def get_default_config_path() -> str:
    """Get the default configuration file path."""
    return str(Path.cwd() / "config" / "experiments.yaml")
