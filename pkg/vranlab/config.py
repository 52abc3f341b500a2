"""
Experiment configuration

A tree of dataclasses built from, in increasing precedence: a named preset,
a YAML file, dotted ``key=value`` overrides and the ``--seed`` flag. The
output directory can also be redirected with the VRAN_OUTPUT_DIR
environment variable. Every field is documented in
docs/guides/CONFIGURATION.md.
"""

import copy
import dataclasses
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple, Union, get_args, get_origin, get_type_hints

import yaml

from .baselines import DiscretizationGrid
from .cost_model import CostCoefficients
from .environment import TrafficProfile, UtilizationModel, UtilizationSamples
from .errors import ConfigError
from .resource_orchestrator import AlphaLossConfig
from .split_orchestrator import EpsilonSchedule

OUTPUT_DIR_ENV = "VRAN_OUTPUT_DIR"


@dataclass
class TrafficConfig:
    kind: str = "diurnal"
    peak_mbps: float = 35.0
    trough_mbps: float = 5.0
    rate_mbps: Optional[float] = None
    stage_jitter: float = 0.1
    packet_size_bytes: int = 1500


@dataclass
class EnvironmentConfig:
    stages_per_episode: int = 120
    seconds_per_stage: int = 60
    vdu_capacity: float = 50.0
    vcu_capacity: float = 50.0
    xhaul_capacity: float = 3000.0
    noise: float = 0.02
    base_rc: float = 4.0
    slope_rc_per_mbps: float = 0.45
    ripple_rc: float = 3.0
    ripple_period_mbps: float = 14.0
    rho_du: Tuple[float, ...] = (1.0, 0.8, 0.65, 0.0)
    rho_cu: Tuple[float, ...] = (0.0, 0.1, 0.175, 0.5)
    utilization_samples: Optional[str] = None
    traffic: TrafficConfig = field(default_factory=TrafficConfig)

    def utilization_model(self) -> UtilizationModel:
        samples = None
        if self.utilization_samples:
            path = Path(self.utilization_samples)
            if not path.is_file():
                raise ConfigError(f"file not found: {path}", key="environment.utilization_samples")
            samples = UtilizationSamples.from_csv(path)
        return UtilizationModel(
            rho_du=self.rho_du,
            rho_cu=self.rho_cu,
            vdu_capacity=self.vdu_capacity,
            vcu_capacity=self.vcu_capacity,
            noise=self.noise,
            base_rc=self.base_rc,
            slope_rc_per_mbps=self.slope_rc_per_mbps,
            ripple_rc=self.ripple_rc,
            ripple_period_mbps=self.ripple_period_mbps,
            samples=samples,
        )

    def traffic_profile(self, num_stages: Optional[int] = None) -> TrafficProfile:
        t = self.traffic
        profile = TrafficProfile(
            kind=t.kind,
            num_stages=num_stages or self.stages_per_episode,
            seconds_per_stage=self.seconds_per_stage,
            peak_mbps=t.peak_mbps,
            trough_mbps=t.trough_mbps,
            rate_mbps=t.rate_mbps,
            stage_jitter=t.stage_jitter,
            packet_size_bytes=t.packet_size_bytes,
        )
        profile.validate()
        return profile


@dataclass
class DqnConfig:
    learning_rate: float = 3e-4
    batch_size: int = 256
    buffer_capacity: int = 1_000_000
    gamma: float = 0.9
    sync_period: int = 10
    hidden: Tuple[int, ...] = (512, 512, 512)
    epsilon_max: float = 0.95
    epsilon_min: float = 0.02
    # None: derived from the episode count
    epsilon_decay: Optional[float] = None
    # transitions collected before the first descent step (None: batch size)
    warmup: Optional[int] = None

    def epsilon_schedule(self, episodes: int) -> EpsilonSchedule:
        if self.epsilon_decay is None:
            return EpsilonSchedule.for_horizon(episodes, self.epsilon_max, self.epsilon_min)
        return EpsilonSchedule(self.epsilon_max, self.epsilon_min, self.epsilon_decay)

    @property
    def warmup_transitions(self) -> int:
        return max(self.batch_size, self.warmup or 0)


@dataclass
class OmegaConfig:
    learning_rate: float = 5e-5
    batch_size: int = 128
    epochs: int = 200
    alpha: float = 2.0
    width: float = 0.25
    underprovision_slope: float = 0.01
    hidden: Tuple[int, ...] = (128, 64, 16)
    safety_margin: float = 0.0
    dataset_size: int = 10_000
    holdout_points: int = 351
    checkpoint: Optional[str] = None

    def loss_config(self) -> AlphaLossConfig:
        return AlphaLossConfig(self.alpha, self.width, self.underprovision_slope)


@dataclass
class ExperimentConfig:
    name: str = "lofv"
    seed: int = 0
    episodes: int = 5000
    eval_episodes: int = 20
    grid_step: float = 0.5
    workers: int = 1
    output_dir: str = "output"
    environment: EnvironmentConfig = field(default_factory=EnvironmentConfig)
    costs: CostCoefficients = field(default_factory=CostCoefficients)
    dqn: DqnConfig = field(default_factory=DqnConfig)
    omega: OmegaConfig = field(default_factory=OmegaConfig)

    def grid(self) -> DiscretizationGrid:
        return DiscretizationGrid(self.grid_step)

    def run_dir(self) -> Path:
        return Path(self.output_dir) / self.name

    def omega_checkpoint(self) -> Path:
        return Path(self.omega.checkpoint) if self.omega.checkpoint else self.run_dir() / "omega.npz"

    def agent_checkpoint(self) -> Path:
        return self.run_dir() / "agent.npz"


PRESETS: Dict[str, Dict[str, Any]] = {
    "full": {},
    "desk": {
        "name": "lofv-desk",
        "episodes": 500,
        "environment": {"stages_per_episode": 60},
        "dqn": {"hidden": [128, 128, 128], "learning_rate": 1e-3},
        "omega": {"learning_rate": 1e-3, "epochs": 40},
    },
}


# Building -----------------------------------------------------------------

def _coerce(value, hint, key: str):
    origin = get_origin(hint)
    args = get_args(hint)
    if origin is Union:
        if value is None:
            if type(None) in args:
                return None
            raise ConfigError("value required", key=key)
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(value, inner, key)
    if dataclasses.is_dataclass(hint):
        if isinstance(value, hint):
            return value
        if not isinstance(value, Mapping):
            raise ConfigError(f"expected a mapping, got {value!r}", key=key)
        return _build(hint, value, key)
    if origin in (tuple, Tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected a list, got {value!r}", key=key)
        return tuple(_coerce(v, args[0], f"{key}[{k}]") for k, v in enumerate(value))
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", key=key)
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"expected an integer, got {value!r}", key=key)
        return int(value)
    if hint is float:
        # YAML 1.1 reads 1e-3 (no dot) as a string
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                raise ConfigError(f"expected a number, got {value!r}", key=key)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key=key)
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", key=key)
        return value
    return value


def _build(cls, data: Mapping, prefix: str = ""):
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        key = f"{prefix}.{sorted(unknown)[0]}" if prefix else sorted(unknown)[0]
        raise ConfigError("unknown configuration key", key=key)
    kwargs = {}
    for name, value in data.items():
        key = f"{prefix}.{name}" if prefix else name
        kwargs[name] = _coerce(value, hints[name], key)
    return cls(**kwargs)


def _merge(base: Dict, update: Mapping) -> Dict:
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def parse_override(text: str) -> Dict:
    """'dqn.batch_size=64' -> {'dqn': {'batch_size': 64}}"""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse value {raw!r}: {e}", key=key)
    nested: Dict = {}
    cursor = nested
    parts = key.split(".")
    for part in parts[:-1]:
        cursor = cursor.setdefault(part, {})
    cursor[parts[-1]] = value
    return nested


def validate(config: ExperimentConfig) -> ExperimentConfig:
    positive = {
        "episodes": config.episodes,
        "eval_episodes": config.eval_episodes,
        "workers": config.workers,
        "environment.stages_per_episode": config.environment.stages_per_episode,
        "environment.seconds_per_stage": config.environment.seconds_per_stage,
        "environment.xhaul_capacity": config.environment.xhaul_capacity,
        "dqn.learning_rate": config.dqn.learning_rate,
        "dqn.batch_size": config.dqn.batch_size,
        "dqn.buffer_capacity": config.dqn.buffer_capacity,
        "omega.learning_rate": config.omega.learning_rate,
        "omega.batch_size": config.omega.batch_size,
        "omega.epochs": config.omega.epochs,
        "omega.dataset_size": config.omega.dataset_size,
        "omega.holdout_points": config.omega.holdout_points,
    }
    for key, value in positive.items():
        if not value > 0:
            raise ConfigError(f"must be positive, got {value!r}", key=key)
    if config.dqn.batch_size > config.dqn.buffer_capacity:
        raise ConfigError("batch larger than replay capacity", key="dqn.batch_size")
    if not config.dqn.hidden or min(config.dqn.hidden) < 1:
        raise ConfigError("hidden layer widths must be positive", key="dqn.hidden")
    if not config.omega.hidden or min(config.omega.hidden) < 1:
        raise ConfigError("hidden layer widths must be positive", key="omega.hidden")
    if config.omega.safety_margin < 0:
        raise ConfigError("must be non-negative", key="omega.safety_margin")

    # constructing the domain objects runs their own checks
    config.environment.utilization_model()
    config.environment.traffic_profile()
    config.dqn.epsilon_schedule(config.episodes)
    config.omega.loss_config()
    config.grid()
    if not 0.0 < config.dqn.gamma <= 1.0:
        raise ConfigError("gamma must be in (0, 1]", key="dqn.gamma")
    if config.dqn.sync_period < 1:
        raise ConfigError("must be positive", key="dqn.sync_period")
    return config


def config_from_dict(data: Mapping) -> ExperimentConfig:
    return validate(_build(ExperimentConfig, data))


def load_config(preset: str = "full", path: Optional[str] = None, overrides: Sequence[str] = (),
                seed: Optional[int] = None, environ: Optional[Mapping[str, str]] = None) -> ExperimentConfig:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r} (choose from {', '.join(PRESETS)})")
    data = copy.deepcopy(PRESETS[preset])

    if path:
        try:
            with open(path) as handle:
                loaded = yaml.safe_load(handle) or {}
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}")
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid YAML in {path}: {e}")
        if not isinstance(loaded, Mapping):
            raise ConfigError(f"{path} must contain a mapping at top level")
        data = _merge(data, loaded)

    for text in overrides:
        data = _merge(data, parse_override(text))
    if seed is not None:
        data["seed"] = seed

    environ = os.environ if environ is None else environ
    if environ.get(OUTPUT_DIR_ENV):
        data["output_dir"] = environ[OUTPUT_DIR_ENV]
    return config_from_dict(data)


def with_overrides(config: ExperimentConfig, *overrides: str) -> ExperimentConfig:
    data = config_to_dict(config)
    for text in overrides:
        data = _merge(data, parse_override(text))
    return config_from_dict(data)


def config_to_dict(config: ExperimentConfig) -> Dict:
    def plain(value):
        if isinstance(value, tuple):
            return [plain(v) for v in value]
        if isinstance(value, dict):
            return {k: plain(v) for k, v in value.items()}
        return value
    return plain(asdict(config))


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def dump_config(config: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as handle:
        yaml.safe_dump(config_to_dict(config), handle, sort_keys=False)
    return path
