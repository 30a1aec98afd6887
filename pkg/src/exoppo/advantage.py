"""Generalized advantage estimation and the value-regression gradient."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from exoppo import diffcore
from exoppo.diffcore import MlpSpec, ParamVector
from exoppo.errors import ConfigurationError, TrainingError
from exoppo.policy import DistParams


@dataclass(frozen=True)
class GaeConfig:
    gamma: float = 0.99
    lam: float = 0.95

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigurationError(f"lambda must lie in [0, 1], got {self.lam}")


@dataclass
class TrajectorySegment:
    """A contiguous run of one environment inside a single episode.

    ``bootstrap_value`` is V of the state following the last step; it is
    ignored when that step terminated the episode.
    """

    rewards: np.ndarray
    values: np.ndarray
    terminated: np.ndarray
    bootstrap_value: float = 0.0
    obs: np.ndarray | None = None
    actions: np.ndarray | None = None
    dists: DistParams | None = None
    truncated_end: bool = False

    def __post_init__(self) -> None:
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.terminated = np.asarray(self.terminated, dtype=bool)
        n = self.rewards.shape[0]
        if n < 1:
            raise ConfigurationError("segment must contain at least one step")
        if self.values.shape != (n,) or self.terminated.shape != (n,):
            raise ConfigurationError("rewards, values and terminated must have equal length")

    def __len__(self) -> int:
        return self.rewards.shape[0]


def td_residuals(seg: TrajectorySegment, cfg: GaeConfig) -> np.ndarray:
    next_values = np.append(seg.values[1:], seg.bootstrap_value)
    return seg.rewards + cfg.gamma * next_values * (~seg.terminated) - seg.values


def gae(seg: TrajectorySegment, cfg: GaeConfig) -> np.ndarray:
    """Backward recursion A_t = delta_t + gamma*lambda*(1 - terminated_t) * A_{t+1}."""
    delta = td_residuals(seg, cfg)
    adv = np.empty_like(delta)
    decay = cfg.gamma * cfg.lam
    running = 0.0
    for t in range(len(delta) - 1, -1, -1):
        if seg.terminated[t]:
            running = 0.0
        running = delta[t] + decay * running
        adv[t] = running
    return adv


def value_targets(seg: TrajectorySegment, advantages: np.ndarray) -> np.ndarray:
    return np.asarray(advantages, dtype=np.float64) + seg.values


@dataclass
class ValueNet:
    spec: MlpSpec
    params: ParamVector

    @classmethod
    def build(
        cls,
        obs_dim: int,
        rng: np.random.Generator,
        hidden: tuple[int, ...] = (64, 64),
        activation: str = "tanh",
    ) -> "ValueNet":
        spec = MlpSpec(obs_dim, tuple(hidden), 1, activation, "identity")
        return cls(spec, diffcore.init_params(spec, rng, output_gain=1.0))

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        out = diffcore.forward(self.spec, self.params, obs)
        return out[..., 0]

    def copy(self) -> "ValueNet":
        return ValueNet(self.spec, self.params.copy())


@dataclass
class ValueLoss:
    loss: float
    grad: np.ndarray = field(repr=False)


def value_loss_grad(value_net: ValueNet, obs: np.ndarray, targets: np.ndarray) -> ValueLoss:
    """0.5 * mean squared error of V(obs) against ``targets`` and its flat gradient."""
    targets = np.asarray(targets, dtype=np.float64)
    if not np.all(np.isfinite(targets)):
        raise TrainingError("non-finite value targets", n_bad=int((~np.isfinite(targets)).sum()))
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    cache = diffcore.forward_cached(value_net.spec, value_net.params, obs)
    err = cache.output[:, 0] - targets
    n = err.shape[0]
    grad = diffcore.backward_from_cache(value_net.spec, value_net.params, cache, (err / n)[:, None])
    return ValueLoss(0.5 * float(np.mean(err * err)), grad.values)
