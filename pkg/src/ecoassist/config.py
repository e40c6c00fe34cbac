"""Experiment configuration: one YAML file covering every module section.

Unknown keys are rejected so that typos surface before any episode runs.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from . import dynamics, reward as rw, safety
from .agent import MpoHyperparams
from .driver import CONSCIENTIOUS, DISTRACTED, IdmParams
from .harness.scenario import Randomization


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class SimulationConfig:
    dt: float = 0.1
    scheme: str = "euler"
    lead_accel: str = "exact"
    fuel_density: float = 0.85
    powertrain: str | None = None  # path; None uses the shipped synthetic map
    max_brake_torque: float = 45000.0
    crawl_speed: float = 1.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("simulation.dt must be positive")
        if self.scheme not in ("euler", "semi_implicit"):
            raise ConfigError(f"unknown integration scheme {self.scheme!r}")
        if self.lead_accel not in ("exact", "estimate"):
            raise ConfigError(f"unknown lead_accel source {self.lead_accel!r}")


@dataclass(frozen=True)
class DemandConfig:
    capacity: int = 512
    confidence: float = 0.9
    fit_every: int = 200
    min_samples: int = 20
    prior: rw.LogisticParams = field(default_factory=rw.LogisticParams)


@dataclass(frozen=True)
class RewardConfig:
    weights: rw.RewardWeights = field(default_factory=rw.RewardWeights)
    norms: rw.NormConstants | None = None  # None derives them from the powertrain


@dataclass(frozen=True)
class ScenarioConfig:
    """One base scenario; ``cycle`` is a shipped cycle name or a CSV path."""

    cycle: str = "urban_train"
    driver: str = "distracted"
    v0: float | None = None
    initial_gap: float = 350.0
    mass: float = 7000.0
    grade: float = 0.0


@dataclass(frozen=True)
class TrainingConfig:
    episodes: int = 500
    scenarios: tuple[ScenarioConfig, ...] = (ScenarioConfig(),)
    randomization: Randomization = field(default_factory=Randomization)
    filter: bool = True
    checkpoint_every: int = 50
    keep_checkpoints: bool = True
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError("training.episodes must be at least 1")
        if self.checkpoint_every < 1:
            raise ConfigError("training.checkpoint_every must be at least 1")
        if not self.scenarios:
            raise ConfigError("training.scenarios must not be empty")


@dataclass(frozen=True)
class EvaluationConfig:
    scenarios: tuple[ScenarioConfig, ...] = (
        ScenarioConfig(cycle="urban_eval", driver="conscientious"),
        ScenarioConfig(cycle="distracted_check", driver="distracted", v0=27.0),
    )
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    randomization: Randomization = field(default_factory=Randomization.none)
    filter: bool = True
    trajectories: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    vehicle: dynamics.VehicleParams = field(default_factory=dynamics.VehicleParams)
    ecbf: safety.EcbfConfig = field(default_factory=safety.EcbfConfig)
    drivers: dict = field(default_factory=lambda: {"conscientious": CONSCIENTIOUS, "distracted": DISTRACTED})
    reward: RewardConfig = field(default_factory=RewardConfig)
    demand: DemandConfig = field(default_factory=DemandConfig)
    agent: MpoHyperparams = field(default_factory=MpoHyperparams)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def __post_init__(self):
        for sc in (*self.training.scenarios, *self.evaluation.scenarios):
            if sc.driver not in self.drivers:
                raise ConfigError(f"unknown driver profile {sc.driver!r}; have {sorted(self.drivers)}")

    def driver(self, sc: ScenarioConfig) -> IdmParams:
        base = self.drivers[sc.driver]
        return base if sc.v0 is None else dataclasses.replace(base, v0=sc.v0)

    def to_dict(self) -> dict:
        return _to_plain(self)


# --------------------------------------------------------------------- parsing
def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.init}
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def _build(cls, data, where: str):
    """Instantiate dataclass ``cls`` from a mapping, recursing into nested dataclasses."""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls) if f.init}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    defaults = cls()
    kwargs = {}
    for name, value in data.items():
        current = getattr(defaults, name)
        path = f"{where}.{name}"
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(type(current), value, path)
        elif name in ("norms",) and value is not None:
            kwargs[name] = _build(rw.NormConstants, value, path)
        elif name == "scenarios":
            if not isinstance(value, list):
                raise ConfigError(f"{path}: expected a list")
            kwargs[name] = tuple(_build(ScenarioConfig, v, f"{path}[{i}]") for i, v in enumerate(value))
        elif name == "drivers":
            if not isinstance(value, dict) or not value:
                raise ConfigError(f"{path}: expected a non-empty mapping of profiles")
            kwargs[name] = {k: _build(IdmParams, v, f"{path}.{k}") for k, v in value.items()}
        elif isinstance(current, tuple) and isinstance(value, list):
            kwargs[name] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            kwargs[name] = value
    if cls is Randomization:
        for key in ("gap_range", "mass_range"):
            if isinstance(kwargs.get(key), list):
                kwargs[key] = tuple(kwargs[key])
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def from_dict(data: dict | None) -> ExperimentConfig:
    return _build(ExperimentConfig, data or {}, "config")


def load_config(path: str | Path | None) -> ExperimentConfig:
    """Parse a YAML experiment file; ``None`` gives all defaults."""
    if path is None:
        return ExperimentConfig()
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(data)


def example_config_text() -> str:
    return resources.files("ecoassist.data").joinpath("example_config.yaml").read_text()


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
