"""Run configuration: nested dataclasses, YAML loading and dotted overrides.

Online training file schema (every key optional except ``env.id``)::

    env:       {id, max_episode_steps, n_envs, seed, reward_scale, grid_size}
    buffer:    {M, nu}
    rollout:   {steps_per_env}
    update:    {epochs, batch_size, normalize_advantages}
    surrogate: {objective, epsilon, alpha, beta}
    gae:       {gamma, lambda}
    optim:     {policy_lr, value_lr, decay_factor, decay_interval}
    network:   {hidden, activation, init_std_scale}
    train:     {total_steps, eval_interval, eval_episodes, checkpoint_interval}

Offline training file schema (``dataset.path`` required)::

    dataset:   {path}
    offline:   {iterations, sigma0, sigma_decay, sigma_min, batch_size, lr,
                seed, eval_interval, eval_episodes, normalize_advantages}
    surrogate: {objective, epsilon, alpha, beta}
    network:   {hidden, activation}

Keys left unset (``null``) resolve to variant-dependent defaults: beta 1.0
for discrete / 0.1 for continuous actions, learning rate 2.5e-4 / 1.5e-4 and
decay 0.99 every 5000 / 0.98 every 1e6 optimizer steps.
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from exoppo.errors import ConfigurationError

SEED_ENV_VAR = "EXOPPO_SEED"

# file keys that are not valid Python identifiers
_ALIASES = {"lambda": "lam"}
_REVERSE_ALIASES = {v: k for k, v in _ALIASES.items()}


@dataclass
class EnvConfig:
    id: str | None = None
    max_episode_steps: int | None = None
    n_envs: int = 2
    seed: int = 0
    reward_scale: float = 1.0
    grid_size: int = 5


@dataclass
class BufferConfig:
    M: int = 4
    nu: list[float] | None = None


@dataclass
class RolloutConfig:
    steps_per_env: int = 256


@dataclass
class UpdateConfig:
    epochs: int = 4
    batch_size: int = 256
    normalize_advantages: bool = True


@dataclass
class SurrogateSection:
    objective: str = "exo"
    epsilon: float = 0.2
    alpha: float = 5.0
    beta: float | None = None


@dataclass
class GaeSection:
    gamma: float = 0.99
    lam: float = 0.95


@dataclass
class OptimConfig:
    policy_lr: float | None = None
    value_lr: float | None = None
    decay_factor: float | None = None
    decay_interval: int | None = None


@dataclass
class NetworkConfig:
    hidden: list[int] = field(default_factory=lambda: [64, 64])
    activation: str = "tanh"
    init_std_scale: float = 1.0


@dataclass
class RunConfig:
    total_steps: int = 200_000
    eval_interval: int = 10_000
    eval_episodes: int = 10
    checkpoint_interval: int = 0


@dataclass
class TrainConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    buffer: BufferConfig = field(default_factory=BufferConfig)
    rollout: RolloutConfig = field(default_factory=RolloutConfig)
    update: UpdateConfig = field(default_factory=UpdateConfig)
    surrogate: SurrogateSection = field(default_factory=SurrogateSection)
    gae: GaeSection = field(default_factory=GaeSection)
    optim: OptimConfig = field(default_factory=OptimConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: RunConfig = field(default_factory=RunConfig)


@dataclass
class DatasetSection:
    path: str | None = None


@dataclass
class OfflineSection:
    iterations: int = 300
    sigma0: float = 1.0 / math.sqrt(2.0 * math.pi)
    sigma_decay: float = 0.995
    sigma_min: float = 0.05
    batch_size: int = 256
    lr: float = 1e-3
    seed: int = 0
    eval_interval: int = 50
    eval_episodes: int = 10
    normalize_advantages: bool = True


@dataclass
class OfflineNetwork:
    hidden: list[int] = field(default_factory=lambda: [64, 64])
    activation: str = "tanh"


@dataclass
class OfflineConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    offline: OfflineSection = field(default_factory=OfflineSection)
    surrogate: SurrogateSection = field(default_factory=SurrogateSection)
    network: OfflineNetwork = field(default_factory=OfflineNetwork)


def valid_keys(cls: type) -> list[str]:
    keys = []
    for f in dataclasses.fields(cls):
        name = _REVERSE_ALIASES.get(f.name, f.name)
        sub = f.default_factory() if f.default_factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(sub):
            keys.extend(f"{name}.{k}" for k in valid_keys(type(sub)))
        else:
            keys.append(name)
    return keys


def _coerce(value: Any, current: Any, key: str, declared: str) -> Any:
    if isinstance(value, str) and ("float" in declared or "int" in declared):
        # YAML 1.1 reads "1e-3" as a string
        try:
            value = float(value)
        except ValueError:
            raise ConfigurationError(f"{key}: expected a number, got {value!r}") from None
        if "float" not in declared and value.is_integer():
            value = int(value)
    if isinstance(value, float) and "float" in declared:
        return value
    if value is None or current is None:
        return value
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigurationError(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigurationError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(current, float):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigurationError(f"{key}: expected a number, got {value!r}")
        return float(value)
    return value


def _apply(obj: Any, data: dict[str, Any], prefix: str, root: type) -> None:
    if not isinstance(data, dict):
        raise ConfigurationError(f"{prefix or 'config'}: expected a mapping, got {data!r}")
    declared = {f.name: str(f.type) for f in dataclasses.fields(obj)}
    for raw_key, value in data.items():
        key = _ALIASES.get(raw_key, raw_key)
        path = f"{prefix}{raw_key}"
        if key not in declared:
            raise ConfigurationError(
                f"unknown config key {path!r}; valid keys: {', '.join(valid_keys(root))}"
            )
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            _apply(current, value, f"{path}.", root)
        else:
            setattr(obj, key, _coerce(value, current, path, declared[key]))


def from_dict(cls: type, data: dict[str, Any] | None) -> Any:
    cfg = cls()
    _apply(cfg, data or {}, "", cls)
    return cfg


def to_dict(cfg: Any) -> dict[str, Any]:
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        key = _REVERSE_ALIASES.get(f.name, f.name)
        out[key] = to_dict(value) if dataclasses.is_dataclass(value) else value
    return out


def parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ConfigurationError(f"override {text!r} must look like key.path=value")
    key, _, raw = text.partition("=")
    return key.strip(), yaml.safe_load(raw)


def apply_overrides(data: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    data = dict(data or {})
    for text in overrides:
        key, value = parse_override(text)
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.get(part)
            if not isinstance(child, dict):
                child = {}
            node[part] = child = dict(child)
            node = child
        node[parts[-1]] = value
    return data


def load_yaml(path: str | os.PathLike) -> dict[str, Any]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: invalid YAML: {exc}") from exc
    return data or {}


def load_train_config(
    path: str | os.PathLike | None = None,
    overrides: list[str] | None = None,
    environ: dict[str, str] | None = None,
) -> TrainConfig:
    data = load_yaml(path) if path is not None else {}
    data = apply_overrides(data, overrides or [])
    cfg = from_dict(TrainConfig, data)
    environ = os.environ if environ is None else environ
    if environ.get(SEED_ENV_VAR):
        try:
            cfg.env.seed = int(environ[SEED_ENV_VAR])
        except ValueError as exc:
            raise ConfigurationError(f"{SEED_ENV_VAR} must be an integer") from exc
    if cfg.env.id is None:
        raise ConfigurationError("missing required config key 'env.id'")
    return cfg


def load_offline_config(
    path: str | os.PathLike | None = None,
    overrides: list[str] | None = None,
    environ: dict[str, str] | None = None,
) -> OfflineConfig:
    data = load_yaml(path) if path is not None else {}
    data = apply_overrides(data, overrides or [])
    cfg = from_dict(OfflineConfig, data)
    environ = os.environ if environ is None else environ
    if environ.get(SEED_ENV_VAR):
        cfg.offline.seed = int(environ[SEED_ENV_VAR])
    if cfg.dataset.path is None:
        raise ConfigurationError("missing required config key 'dataset.path'")
    return cfg


def dump_yaml(cfg: Any) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=True)
