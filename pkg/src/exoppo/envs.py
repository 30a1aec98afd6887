"""Small seeded control environments and a vectorised pool with auto-reset.

Dynamics constants
------------------
cartbalance
    Cart-pole with explicit Euler integration: gravity 9.8, cart mass 1.0,
    pole mass 0.1, pole half-length 0.5, push force +-10 N, tau 0.02 s.
    Initial state uniform in [-0.05, 0.05]^4 (x, x_dot, theta, theta_dot).
    Terminates when |x| > 2.4 or |theta| > 12 degrees. Reward +1 per step.
pendulum
    Torque-limited swing-up: g 10, m 1, l 1, dt 0.05, |u| <= 2, |theta_dot| <= 8.
    Observation (cos theta, sin theta, theta_dot), theta = 0 is upright.
    Reward -(theta^2 + 0.1 theta_dot^2 + 0.001 u^2) with theta wrapped to
    [-pi, pi). Initial theta ~ U[-pi, pi], theta_dot ~ U[-1, 1]. Never terminates.
gridworld
    ``size`` x ``size`` grid (default 5), start at cell (0, 0), goal at the
    opposite corner. Actions 0 up, 1 right, 2 down, 3 left; moves into walls
    leave the agent in place. Reward -0.01 per step, +1 on entering the goal
    (which terminates). Observation is the one-hot cell index.

All rewards are multiplied by ``EnvSpec.reward_scale``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from exoppo.errors import ConfigurationError, InputError

ENV_IDS = ("cartbalance", "pendulum", "gridworld")
DEFAULT_MAX_STEPS = {"cartbalance": 200, "pendulum": 200, "gridworld": 50}


@dataclass(frozen=True)
class EnvSpec:
    id: str
    max_episode_steps: int | None = None
    reward_scale: float = 1.0
    grid_size: int = 5

    def __post_init__(self) -> None:
        if self.id not in ENV_IDS:
            raise ConfigurationError(f"unknown env id {self.id!r}; valid: {', '.join(ENV_IDS)}")
        if self.max_episode_steps is None:
            object.__setattr__(self, "max_episode_steps", DEFAULT_MAX_STEPS[self.id])
        if int(self.max_episode_steps) < 1:
            raise ConfigurationError("max_episode_steps must be >= 1")
        if self.id == "gridworld" and self.grid_size < 2:
            raise ConfigurationError("grid_size must be >= 2")

    @property
    def discrete(self) -> bool:
        return self.id != "pendulum"

    @property
    def obs_dim(self) -> int:
        return {"cartbalance": 4, "pendulum": 3, "gridworld": self.grid_size**2}[self.id]

    @property
    def action_dim(self) -> int:
        """Number of discrete actions, or the continuous action dimension."""
        return {"cartbalance": 2, "pendulum": 1, "gridworld": 4}[self.id]

    @property
    def action_bounds(self) -> tuple[float, float] | None:
        return (-2.0, 2.0) if self.id == "pendulum" else None


@dataclass
class StepResult:
    next_obs: np.ndarray
    reward: float
    terminated: bool
    truncated: bool
    # set by EnvPool when the slot was auto-reset after this step
    reset_obs: np.ndarray | None = None

    @property
    def done(self) -> bool:
        return self.terminated or self.truncated


class Env:
    """Base class: episode bookkeeping, seeding and truncation."""

    def __init__(self, spec: EnvSpec, seed: int = 0) -> None:
        self.spec = spec
        self.rng = np.random.default_rng(seed)
        self.elapsed = 0
        self.needs_reset = True

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.elapsed = 0
        self.needs_reset = False
        self._reset()
        return self._obs()

    def step(self, action: Any) -> StepResult:
        if self.needs_reset:
            raise InputError("step() called on a finished episode; call reset() first")
        reward, terminated = self._step(action)
        self.elapsed += 1
        truncated = not terminated and self.elapsed >= self.spec.max_episode_steps
        self.needs_reset = terminated or truncated
        return StepResult(self._obs(), reward * self.spec.reward_scale, terminated, truncated)

    def _discrete_action(self, action: Any) -> int:
        arr = np.asarray(action)
        if arr.size != 1 or arr.dtype.kind not in "iuf":
            raise InputError(f"{self.spec.id}: action must be an integer, got {action!r}")
        value = arr.reshape(()).item()
        if isinstance(value, float) and not value.is_integer():
            raise InputError(f"{self.spec.id}: action must be an integer, got {action!r}")
        a = int(value)
        if not 0 <= a < self.spec.action_dim:
            raise InputError(f"{self.spec.id}: action {a} outside [0, {self.spec.action_dim})")
        return a

    def _reset(self) -> None:
        raise NotImplementedError

    def _step(self, action: Any) -> tuple[float, bool]:
        raise NotImplementedError

    def _obs(self) -> np.ndarray:
        raise NotImplementedError


class CartBalance(Env):
    GRAVITY = 9.8
    MASS_CART = 1.0
    MASS_POLE = 0.1
    HALF_LENGTH = 0.5
    FORCE = 10.0
    TAU = 0.02
    X_LIMIT = 2.4
    THETA_LIMIT = 12 * 2 * math.pi / 360

    def _reset(self) -> None:
        self.state = self.rng.uniform(-0.05, 0.05, size=4)

    def _step(self, action: Any) -> tuple[float, bool]:
        a = self._discrete_action(action)
        x, x_dot, theta, theta_dot = (float(v) for v in self.state)
        force = self.FORCE if a == 1 else -self.FORCE
        total_mass = self.MASS_CART + self.MASS_POLE
        pm_l = self.MASS_POLE * self.HALF_LENGTH
        cos, sin = math.cos(theta), math.sin(theta)
        temp = (force + pm_l * theta_dot**2 * sin) / total_mass
        theta_acc = (self.GRAVITY * sin - cos * temp) / (
            self.HALF_LENGTH * (4.0 / 3.0 - self.MASS_POLE * cos**2 / total_mass)
        )
        x_acc = temp - pm_l * theta_acc * cos / total_mass
        x = x + self.TAU * x_dot
        x_dot = x_dot + self.TAU * x_acc
        theta = theta + self.TAU * theta_dot
        theta_dot = theta_dot + self.TAU * theta_acc
        self.state = np.array([x, x_dot, theta, theta_dot])
        terminated = abs(x) > self.X_LIMIT or abs(theta) > self.THETA_LIMIT
        return 1.0, terminated

    def _obs(self) -> np.ndarray:
        return self.state.copy()


def angle_normalize(theta: float) -> float:
    return ((theta + math.pi) % (2 * math.pi)) - math.pi


class Pendulum(Env):
    GRAVITY = 10.0
    MASS = 1.0
    LENGTH = 1.0
    DT = 0.05
    MAX_SPEED = 8.0
    MAX_TORQUE = 2.0

    def _reset(self) -> None:
        self.theta = float(self.rng.uniform(-math.pi, math.pi))
        self.theta_dot = float(self.rng.uniform(-1.0, 1.0))

    def _step(self, action: Any) -> tuple[float, bool]:
        u = float(np.asarray(action, dtype=np.float64).reshape(-1)[0])
        if not math.isfinite(u):
            raise InputError(f"pendulum: non-finite action {action!r}")
        u = min(max(u, -self.MAX_TORQUE), self.MAX_TORQUE)
        th, thdot = self.theta, self.theta_dot
        cost = angle_normalize(th) ** 2 + 0.1 * thdot**2 + 0.001 * u**2
        thdot = thdot + (3 * self.GRAVITY / (2 * self.LENGTH) * math.sin(th) + 3.0 / (self.MASS * self.LENGTH**2) * u) * self.DT
        thdot = min(max(thdot, -self.MAX_SPEED), self.MAX_SPEED)
        self.theta = th + thdot * self.DT
        self.theta_dot = thdot
        return -cost, False

    def _obs(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta), self.theta_dot])


class GridWorld(Env):
    MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))

    def _reset(self) -> None:
        self.pos = (0, 0)

    def _step(self, action: Any) -> tuple[float, bool]:
        a = self._discrete_action(action)
        n = self.spec.grid_size
        dr, dc = self.MOVES[a]
        r = min(max(self.pos[0] + dr, 0), n - 1)
        c = min(max(self.pos[1] + dc, 0), n - 1)
        self.pos = (r, c)
        if self.pos == (n - 1, n - 1):
            return 1.0, True
        return -0.01, False

    def _obs(self) -> np.ndarray:
        n = self.spec.grid_size
        obs = np.zeros(n * n)
        obs[self.pos[0] * n + self.pos[1]] = 1.0
        return obs


_ENV_CLASSES = {"cartbalance": CartBalance, "pendulum": Pendulum, "gridworld": GridWorld}


def make_env(spec: EnvSpec | str, seed: int = 0) -> Env:
    if isinstance(spec, str):
        spec = EnvSpec(spec)
    return _ENV_CLASSES[spec.id](spec, seed)


def reset(env: Env, seed: int | None = None) -> np.ndarray:
    return env.reset(seed)


def step(env: Env, action: Any) -> StepResult:
    return env.step(action)


class EnvPool:
    """``n_envs`` independent copies stepped in lock-step.

    Env ``i`` owns the RNG stream ``seed + i``. When a slot finishes an
    episode it is reset immediately: the returned :class:`StepResult` keeps
    the true final observation in ``next_obs`` and the fresh one in
    ``reset_obs``; :attr:`obs` always holds the observations to act on next.
    """

    def __init__(self, spec: EnvSpec, n_envs: int, seed: int = 0) -> None:
        if n_envs < 1:
            raise ConfigurationError(f"n_envs must be >= 1, got {n_envs}")
        self.spec = spec
        self.n_envs = n_envs
        self.seed = seed
        self.envs = [make_env(spec, seed + i) for i in range(n_envs)]
        self.obs = np.stack([env.reset() for env in self.envs])
        self.total_steps = 0
        self.running_returns = np.zeros(n_envs)
        # unscaled returns of completed episodes, in completion order
        self.finished_returns: list[float] = []

    @property
    def step_counts(self) -> list[int]:
        return [env.elapsed for env in self.envs]

    def step(self, actions: Any) -> list[StepResult]:
        if len(actions) != self.n_envs:
            raise InputError(f"expected {self.n_envs} actions, got {len(actions)}")
        results = []
        for i, (env, action) in enumerate(zip(self.envs, actions)):
            res = env.step(action)
            self.running_returns[i] += res.reward
            if res.done:
                self.finished_returns.append(float(self.running_returns[i]) / self.spec.reward_scale)
                self.running_returns[i] = 0.0
                res.reset_obs = env.reset()
                self.obs[i] = res.reset_obs
            else:
                self.obs[i] = res.next_obs
            results.append(res)
        self.total_steps += self.n_envs
        return results


def pool_step(pool: EnvPool, actions: Any) -> list[StepResult]:
    return pool.step(actions)
