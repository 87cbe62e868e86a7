"""
Run Configuration
Scenario, agent and run settings loaded from YAML into validated dataclasses
"""
import copy
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Sequence, Tuple, Union, get_args, get_origin

import yaml

from errors import ConfigError

logger = logging.getLogger(__name__)


def _require_positive(path: str, value: float) -> None:
    if not (math.isfinite(value) and value > 0):
        raise ConfigError(path, f"must be a finite value > 0, got {value!r}")


def _require_non_negative(path: str, value: float) -> None:
    if not (math.isfinite(value) and value >= 0):
        raise ConfigError(path, f"must be a finite value >= 0, got {value!r}")


@dataclass(frozen=True)
class SliceSpec:
    """Traffic and QoS description of one network slice."""

    slice_id: int
    arrival_rate_mean: float = 1.0     # packets/step per UE
    ue_arrival_rate: float = 2.0       # new UEs/step (Poisson mean)
    ue_mean_lifetime: float = 20.0     # steps
    qos_latency: float = 20.0          # ms
    bandwidth: float = 2.0
    tx_power: float = 0.2              # W, stands in for the precoder norm

    def validate(self, path: str = "slices") -> None:
        _require_positive(f"{path}.qos_latency", self.qos_latency)
        for name in ("arrival_rate_mean", "ue_arrival_rate", "tx_power"):
            _require_non_negative(f"{path}.{name}", getattr(self, name))
        _require_positive(f"{path}.bandwidth", self.bandwidth)
        # geometric lifetimes need a success probability <= 1
        if not (math.isfinite(self.ue_mean_lifetime) and self.ue_mean_lifetime >= 1):
            raise ConfigError(f"{path}.ue_mean_lifetime", "must be >= 1 step")


def _default_slices() -> Tuple[SliceSpec, ...]:
    return (
        SliceSpec(slice_id=0, ue_arrival_rate=2.0, ue_mean_lifetime=20.0, qos_latency=20.0, bandwidth=2.0),
        SliceSpec(slice_id=1, ue_arrival_rate=1.5, ue_mean_lifetime=25.0, qos_latency=40.0, bandwidth=1.5),
    )


@dataclass(frozen=True)
class ScenarioConfig:
    """Physical, queueing and cost parameters; the single source of truth for a run."""

    num_cells: int = 10
    num_cpus: int = 4
    cpu_capacity: float = 1000.0       # MOPTS per CPU
    max_vnfs: int = 8
    vnf_capacity: float = 250.0        # MOPTS per VNF
    theta: float = 10.0
    k0: float = 5.0
    mu_star: float = 10.0              # packets/step per VNF
    boot_latency: float = 5.0          # ms per newly booted VNF
    vnf_energy: float = 1.0            # J per active VNF per step
    sigma_star: float = 1e-26
    amp_efficiency: float = 0.5
    slices: Tuple[SliceSpec, ...] = field(default_factory=_default_slices)
    weights: Tuple[float, float, float] = (0.01, 1.0, 0.1)
    cpu_split: Tuple[float, float, float] = (0.5, 0.1, 0.4)
    episode_length: int = 200
    latency_cap: float = 200.0         # ms
    qos_penalty: float = 1.0
    saturation_penalty: float = 1.0
    max_ues: int = 100
    energy_cap: float = 200.0          # J
    sinr_min: float = 1.0
    sinr_max: float = 15.0
    reward_epsilon: float = 1e-6

    @property
    def num_slices(self) -> int:
        return len(self.slices)

    @property
    def total_capacity(self) -> float:
        return self.num_cpus * self.cpu_capacity

    @property
    def observation_dim(self) -> int:
        return 6 * self.num_slices

    @property
    def action_dim(self) -> int:
        return self.num_slices

    def validate(self) -> None:
        for name in ("num_cells", "num_cpus", "max_vnfs", "episode_length", "max_ues"):
            if getattr(self, name) < 1:
                raise ConfigError(f"scenario.{name}", "must be >= 1")
        for name in ("cpu_capacity", "vnf_capacity", "theta", "k0", "mu_star",
                     "latency_cap", "energy_cap", "reward_epsilon"):
            _require_positive(f"scenario.{name}", getattr(self, name))
        for name in ("boot_latency", "vnf_energy", "sigma_star", "qos_penalty", "saturation_penalty"):
            _require_non_negative(f"scenario.{name}", getattr(self, name))
        if not 0 < self.amp_efficiency <= 1:
            raise ConfigError("scenario.amp_efficiency", "must lie in (0, 1]")
        if len(self.weights) != 3:
            raise ConfigError("scenario.weights", "needs three strictly positive weights")
        for index, weight in enumerate(self.weights):
            _require_positive(f"scenario.weights.{index}", weight)
        if len(self.cpu_split) != 3 or not all(math.isfinite(s) and s >= 0 for s in self.cpu_split):
            raise ConfigError("scenario.cpu_split", "needs three non-negative fractions")
        if abs(sum(self.cpu_split) - 1.0) > 1e-12:
            raise ConfigError("scenario.cpu_split", f"must sum to 1, got {sum(self.cpu_split)!r}")
        if self.max_vnfs * self.vnf_capacity > self.total_capacity:
            raise ConfigError("scenario.max_vnfs",
                              f"max_vnfs * vnf_capacity ({self.max_vnfs * self.vnf_capacity}) "
                              f"exceeds num_cpus * cpu_capacity ({self.total_capacity})")
        if not (0 <= self.sinr_min <= self.sinr_max and math.isfinite(self.sinr_max)):
            raise ConfigError("scenario.sinr_min", "need 0 <= sinr_min <= sinr_max")
        if self.sinr_min == 0 and self.sinr_max > 0:
            # log-uniform sampling needs a positive lower edge
            raise ConfigError("scenario.sinr_min", "must be > 0 unless sinr_max is 0 too")
        if not self.slices:
            raise ConfigError("scenario.slices", "at least one slice is required")
        ids = [s.slice_id for s in self.slices]
        if len(set(ids)) != len(ids):
            raise ConfigError("scenario.slices", f"duplicate slice ids {ids}")
        for index, spec in enumerate(self.slices):
            spec.validate(f"scenario.slices.{index}")


@dataclass(frozen=True)
class AgentConfig:
    """TD3 / DDPG hyperparameters; defaults match the full-scale profile."""

    algorithm: str = "td3"
    discount: float = 0.99
    tau: float = 0.005
    policy_freq: int = 2
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    exploration_noise: float = 0.1
    batch_size: int = 128
    start_timesteps: int = 20000
    max_timesteps: int = 200000
    min_action: float = -1.0
    max_action: float = 1.0
    hidden_sizes: Tuple[int, ...] = (64, 64)
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    optimizer: str = "adam"
    buffer_capacity: int = 1000000

    @property
    def is_ddpg(self) -> bool:
        return self.algorithm == "ddpg"

    @property
    def effective_policy_freq(self) -> int:
        return 1 if self.is_ddpg else self.policy_freq

    def validate(self) -> None:
        if self.algorithm not in ("td3", "ddpg"):
            raise ConfigError("agent.algorithm", f"expected td3 or ddpg, got {self.algorithm!r}")
        if not 0 <= self.discount <= 1:
            raise ConfigError("agent.discount", "must lie in [0, 1]")
        if not 0 < self.tau <= 1:
            raise ConfigError("agent.tau", "must lie in (0, 1]")
        if self.policy_freq < 1:
            raise ConfigError("agent.policy_freq", "must be >= 1")
        for name in ("policy_noise", "noise_clip", "exploration_noise"):
            _require_non_negative(f"agent.{name}", getattr(self, name))
        if self.batch_size < 1:
            raise ConfigError("agent.batch_size", "must be >= 1")
        if self.start_timesteps < 0 or self.max_timesteps < 0:
            raise ConfigError("agent.start_timesteps", "timestep counts must be >= 0")
        if not (math.isfinite(self.min_action) and math.isfinite(self.max_action)
                and self.min_action < self.max_action):
            raise ConfigError("agent.min_action", "must be finite and below max_action")
        if any(size < 1 for size in self.hidden_sizes):
            raise ConfigError("agent.hidden_sizes", "layer widths must be >= 1")
        _require_positive("agent.actor_lr", self.actor_lr)
        _require_positive("agent.critic_lr", self.critic_lr)
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("agent.optimizer", f"expected adam or sgd, got {self.optimizer!r}")
        if self.buffer_capacity < 1:
            raise ConfigError("agent.buffer_capacity", "must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    """Everything one CLI invocation needs."""

    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    seeds: Tuple[int, ...] = (0,)
    output_dir: str = "runs/default"
    flush_interval: int = 1000
    checkpoint_interval: int = 0
    smoothing_window: int = 100
    workers: int = 1
    save_buffer: bool = True           # replay buffer sidecar next to each checkpoint

    def validate(self) -> None:
        self.scenario.validate()
        self.agent.validate()
        if not self.seeds:
            raise ConfigError("run.seeds", "at least one seed is required")
        if self.flush_interval < 1:
            raise ConfigError("run.flush_interval", "must be >= 1")
        if self.checkpoint_interval < 0:
            raise ConfigError("run.checkpoint_interval", "must be >= 0 (0 = only at the end)")
        if self.smoothing_window < 1:
            raise ConfigError("run.smoothing_window", "must be >= 1")
        if self.workers < 1:
            raise ConfigError("run.workers", "must be >= 1")


def _coerce(value: Any, annotation: Any, path: str) -> Any:
    """Convert a YAML scalar/list to the annotated dataclass field type."""
    if annotation is SliceSpec:
        return _build(SliceSpec, value, path)
    origin = get_origin(annotation)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {type(value).__name__}")
        args = get_args(annotation)
        item_type = args[0]
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, item_type, f"{path}.{i}") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(path, f"expected {len(args)} items, got {len(value)}")
        return tuple(_coerce(v, t, f"{path}.{i}") for i, (v, t) in enumerate(zip(value, args)))
    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true or false, got {value!r}")
        return value
    if isinstance(value, bool):
        raise ConfigError(path, "booleans are not accepted here")
    if annotation is int:
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if annotation is float:
        if isinstance(value, str):
            try:
                value = float(value)
            except ValueError:
                raise ConfigError(path, f"expected a number, got {value!r}")
        if not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(path, f"must be finite, got {value!r}")
        return float(value)
    if annotation is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    return value


def _build(cls, raw: Any, path: str):
    """Build a frozen dataclass from a mapping, rejecting unknown keys."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(path, f"expected a mapping, got {type(raw).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}", "unknown key")
    kwargs = {}
    for name, value in raw.items():
        kwargs[name] = _coerce(value, known[name].type, f"{path}.{name}")
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(path, str(e))


def apply_override(raw: Dict[str, Any], override: str) -> None:
    """Apply one ``dot.path=value`` override to a raw config mapping in place."""
    if "=" not in override:
        raise ConfigError(override, "override must look like key=value")
    key, text = override.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(override, "empty override key")
    value = yaml.safe_load(text)
    node: Any = raw
    for depth, part in enumerate(parts[:-1]):
        dotted = ".".join(parts[:depth + 1])
        if isinstance(node, list):
            try:
                node = node[int(part)]
            except (ValueError, IndexError):
                raise ConfigError(dotted, "no such list element")
        else:
            if part not in node or node[part] is None:
                node[part] = {}
            node = node[part]
    last = parts[-1]
    if isinstance(node, list):
        try:
            node[int(last)] = value
        except (ValueError, IndexError):
            raise ConfigError(key, "no such list element")
    else:
        node[last] = value


def _slices_to_raw(raw_scenario: Dict[str, Any]) -> None:
    # Materialise default slices so `scenario.slices.N.x=...` overrides have a target.
    if "slices" not in raw_scenario:
        raw_scenario["slices"] = [dataclasses.asdict(s) for s in _default_slices()]


def build_run_config(raw: Dict[str, Any], overrides: Sequence[str] = ()) -> RunConfig:
    """Turn a raw nested mapping (plus overrides) into a validated RunConfig."""
    raw = copy.deepcopy(raw) if raw else {}
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "top level must be a mapping")
    unknown = sorted(set(raw) - {"scenario", "agent", "run"})
    if unknown:
        raise ConfigError(unknown[0], "unknown top-level section")
    raw.setdefault("scenario", {})
    raw["scenario"] = raw["scenario"] or {}
    _slices_to_raw(raw["scenario"])
    for override in overrides:
        apply_override(raw, override)

    scenario = _build(ScenarioConfig, raw.get("scenario"), "scenario")
    scenario = dataclasses.replace(scenario, slices=tuple(sorted(scenario.slices, key=lambda s: s.slice_id)))
    agent = _build(AgentConfig, raw.get("agent"), "agent")
    run_raw = dict(raw.get("run") or {})
    run_raw["scenario"] = scenario
    run_raw["agent"] = agent
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(run_raw) - known)
    if unknown:
        raise ConfigError(f"run.{unknown[0]}", "unknown key")
    kwargs: Dict[str, Any] = {"scenario": scenario, "agent": agent}
    for f in dataclasses.fields(RunConfig):
        if f.name in ("scenario", "agent") or f.name not in run_raw:
            continue
        kwargs[f.name] = _coerce(run_raw[f.name], f.type, f"run.{f.name}")
    config = RunConfig(**kwargs)
    config.validate()
    return config


def load_run_config(path: Union[str, Path], overrides: Sequence[str] = ()) -> RunConfig:
    """Load a YAML run configuration from disk."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(str(path), f"cannot read config: {e}")
    except yaml.YAMLError as e:
        raise ConfigError(str(path), f"invalid YAML: {e}")
    config = build_run_config(raw or {}, overrides)
    logger.info(f"Loaded config {path} ({config.agent.algorithm}, "
                f"{config.scenario.num_slices} slices, seeds {list(config.seeds)})")
    return config


def config_to_dict(config: Union[RunConfig, ScenarioConfig, AgentConfig]) -> Dict[str, Any]:
    """Plain nested dict (lists instead of tuples) suitable for JSON/YAML echo."""

    def _plain(value: Any) -> Any:
        if isinstance(value, dict):
            return {k: _plain(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [_plain(v) for v in value]
        return value

    return _plain(dataclasses.asdict(config))


def scenario_from_dict(raw: Dict[str, Any]) -> ScenarioConfig:
    scenario = _build(ScenarioConfig, raw, "scenario")
    scenario.validate()
    return scenario


def agent_from_dict(raw: Dict[str, Any]) -> AgentConfig:
    agent = _build(AgentConfig, raw, "agent")
    agent.validate()
    return agent
