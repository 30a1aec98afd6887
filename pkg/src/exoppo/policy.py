"""Categorical and diagonal-Gaussian policies on top of the MLP core.

Distributions are plain value objects (:class:`DistParams`) whose arrays may
carry a leading batch axis. Policy gradients are produced as flat vectors over
``PolicyModel.flat()`` (network weights first, then log-std for Gaussians).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from exoppo import diffcore
from exoppo.diffcore import ForwardCache, MlpSpec, ParamVector
from exoppo.errors import ConfigurationError, InputError

PROB_FLOOR = 1e-12
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
KINDS = ("categorical", "gaussian")


@dataclass(frozen=True)
class DistParams:
    """A frozen action distribution (optionally batched along axis 0).

    Categorical: ``probs[..., K]``. Gaussian: ``mean[..., d]`` and ``std[..., d]``.
    Build through :meth:`categorical` / :meth:`gaussian` so invariants hold.
    """

    kind: str
    probs: np.ndarray | None = None
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    @classmethod
    def categorical(cls, probs: Any) -> "DistParams":
        p = np.asarray(probs, dtype=np.float64)
        if p.ndim == 0 or p.shape[-1] < 1:
            raise InputError("categorical distribution needs at least one action")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise InputError("categorical probabilities must be finite and non-negative")
        k = p.shape[-1]
        p = p / p.sum(axis=-1, keepdims=True)
        # affine floor keeps every entry >= PROB_FLOOR while summing to 1
        p = PROB_FLOOR + (1.0 - k * PROB_FLOOR) * p
        return cls("categorical", probs=p)

    @classmethod
    def gaussian(cls, mean: Any, std: Any) -> "DistParams":
        mu = np.asarray(mean, dtype=np.float64)
        sd = np.broadcast_to(np.asarray(std, dtype=np.float64), mu.shape).copy()
        if np.any(sd <= 0) or not np.all(np.isfinite(sd)):
            raise InputError("gaussian std must be finite and strictly positive")
        return cls("gaussian", mean=mu, std=sd)

    @property
    def batch_shape(self) -> tuple[int, ...]:
        arr = self.probs if self.kind == "categorical" else self.mean
        return arr.shape[:-1]

    @property
    def dim(self) -> int:
        """Number of actions (categorical) or action dimension (gaussian)."""
        arr = self.probs if self.kind == "categorical" else self.mean
        return arr.shape[-1]

    def __getitem__(self, idx: Any) -> "DistParams":
        if self.kind == "categorical":
            return DistParams("categorical", probs=self.probs[idx])
        return DistParams("gaussian", mean=self.mean[idx], std=self.std[idx])

    def to_array(self) -> np.ndarray:
        """Flat row(s): probs for categorical, ``[mean, std]`` for gaussian."""
        if self.kind == "categorical":
            return self.probs.copy()
        return np.concatenate([self.mean, self.std], axis=-1)

    @classmethod
    def from_array(cls, kind: str, arr: np.ndarray) -> "DistParams":
        arr = np.asarray(arr, dtype=np.float64)
        if kind == "categorical":
            return cls("categorical", probs=arr.copy())
        if kind != "gaussian":
            raise InputError(f"unknown distribution kind {kind!r}")
        d = arr.shape[-1] // 2
        return cls("gaussian", mean=arr[..., :d].copy(), std=arr[..., d:].copy())

    def width(self) -> int:
        return self.dim if self.kind == "categorical" else 2 * self.dim


def stack(dists: list[DistParams]) -> DistParams:
    kind = dists[0].kind
    if kind == "categorical":
        return DistParams(kind, probs=np.stack([d.probs for d in dists]))
    return DistParams(kind, mean=np.stack([d.mean for d in dists]), std=np.stack([d.std for d in dists]))


def concat(dists: list[DistParams]) -> DistParams:
    kind = dists[0].kind
    if kind == "categorical":
        return DistParams(kind, probs=np.concatenate([d.probs for d in dists]))
    return DistParams(
        kind, mean=np.concatenate([d.mean for d in dists]), std=np.concatenate([d.std for d in dists])
    )


# -- distribution math --------------------------------------------------------


def _action_index(dist: DistParams, action: Any) -> np.ndarray:
    a = np.asarray(action)
    if a.dtype.kind == "f":
        if np.any(a != np.round(a)):
            raise InputError(f"discrete action must be integral, got {action!r}")
        a = a.astype(np.int64)
    if a.dtype.kind not in "iu":
        raise InputError(f"discrete action must be an integer, got {action!r}")
    if np.any(a < 0) or np.any(a >= dist.dim):
        raise InputError(f"discrete action {action!r} outside [0, {dist.dim})")
    return a


def log_prob(dist: DistParams, action: Any) -> np.ndarray | float:
    """Log-probability (mass or density) of ``action``; batched over leading axes."""
    if dist.kind == "categorical":
        a = _action_index(dist, action)
        lp = np.log(np.take_along_axis(dist.probs, a[..., None], axis=-1)[..., 0])
    else:
        x = np.asarray(action, dtype=np.float64)
        if x.shape[-1:] != dist.mean.shape[-1:]:
            raise InputError(f"action of shape {x.shape} does not match gaussian dim {dist.dim}")
        z = (x - dist.mean) / dist.std
        lp = (-0.5 * z * z - np.log(dist.std) - LOG_SQRT_2PI).sum(axis=-1)
    return float(lp) if np.ndim(lp) == 0 else lp


def entropy(dist: DistParams) -> np.ndarray | float:
    if dist.kind == "categorical":
        h = -(dist.probs * np.log(dist.probs)).sum(axis=-1)
    else:
        h = (np.log(dist.std) + 0.5 + LOG_SQRT_2PI).sum(axis=-1)
    return float(h) if np.ndim(h) == 0 else h


def kl(current: DistParams, ref: DistParams) -> np.ndarray | float:
    """KL(current || ref), closed form, batched over leading axes."""
    if current.kind != ref.kind:
        raise InputError(f"cannot compare {current.kind} with {ref.kind}")
    if current.dim != ref.dim:
        raise InputError(f"dimension mismatch: {current.dim} vs {ref.dim}")
    if current.kind == "categorical":
        p, q = current.probs, ref.probs
        out = (p * (np.log(p) - np.log(q))).sum(axis=-1)
    else:
        var_ratio = (current.std / ref.std) ** 2
        shift = ((current.mean - ref.mean) / ref.std) ** 2
        out = 0.5 * (var_ratio + shift - 1.0 - np.log(var_ratio)).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def sample(dist: DistParams, rng: np.random.Generator) -> np.ndarray | int:
    """Draw one action per batch row (categorical by inverse CDF)."""
    if dist.kind == "categorical":
        cdf = np.cumsum(dist.probs, axis=-1)
        u = rng.random(dist.batch_shape)
        idx = (cdf < np.asarray(u)[..., None] * cdf[..., -1:]).sum(axis=-1)
        idx = np.minimum(idx, dist.dim - 1)
        return int(idx) if np.ndim(idx) == 0 else idx.astype(np.int64)
    return dist.mean + dist.std * rng.standard_normal(dist.mean.shape)


def mode(dist: DistParams) -> np.ndarray | int:
    if dist.kind == "categorical":
        idx = np.argmax(dist.probs, axis=-1)
        return int(idx) if np.ndim(idx) == 0 else idx
    return dist.mean.copy()


# -- parameterised policies ---------------------------------------------------


@dataclass
class PolicyModel:
    spec: MlpSpec
    params: ParamVector
    kind: str
    log_std: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigurationError(f"policy kind must be one of {KINDS}, got {self.kind!r}")
        expected = "softmax" if self.kind == "categorical" else "identity"
        if self.spec.output_transform != expected:
            raise ConfigurationError(f"{self.kind} policy needs output_transform={expected!r}")
        if self.kind == "gaussian":
            if self.log_std is None:
                self.log_std = np.zeros(self.spec.output_dim)
            self.log_std = np.asarray(self.log_std, dtype=np.float64)
            if self.log_std.shape != (self.spec.output_dim,):
                raise ConfigurationError("log_std must have one entry per action dimension")
        elif self.log_std is not None:
            raise ConfigurationError("categorical policies have no log_std")

    @classmethod
    def build(
        cls,
        kind: str,
        obs_dim: int,
        action_dim: int,
        rng: np.random.Generator,
        hidden: tuple[int, ...] = (64, 64),
        activation: str = "tanh",
        init_std: float | np.ndarray = 1.0,
    ) -> "PolicyModel":
        transform = "softmax" if kind == "categorical" else "identity"
        spec = MlpSpec(obs_dim, tuple(hidden), action_dim, activation, transform)
        params = diffcore.init_params(spec, rng, output_gain=0.01)
        log_std = None
        if kind == "gaussian":
            log_std = np.log(np.broadcast_to(np.asarray(init_std, dtype=np.float64), (action_dim,))).copy()
        return cls(spec, params, kind, log_std)

    @property
    def n_params(self) -> int:
        extra = 0 if self.log_std is None else self.log_std.shape[0]
        return len(self.params) + extra

    def flat(self) -> np.ndarray:
        if self.log_std is None:
            return self.params.values.copy()
        return np.concatenate([self.params.values, self.log_std])

    def set_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_params,):
            raise ConfigurationError(f"flat vector has shape {vec.shape}, expected ({self.n_params},)")
        n = len(self.params)
        self.params = ParamVector(vec[:n].copy(), self.params.shapes)
        if self.log_std is not None:
            self.log_std = vec[n:].copy()

    def copy(self) -> "PolicyModel":
        return PolicyModel(
            self.spec, self.params.copy(), self.kind, None if self.log_std is None else self.log_std.copy()
        )

    def to_dict(self) -> dict[str, Any]:
        return {"spec": self.spec, "params": self.params, "kind": self.kind, "log_std": self.log_std}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PolicyModel":
        log_std = d.get("log_std")
        return cls(d["spec"], d["params"], d["kind"], None if log_std is None else np.asarray(log_std))


@dataclass
class PolicyEval:
    """Distribution at a batch of states plus the cache needed for gradients."""

    dist: DistParams
    cache: ForwardCache
    raw_probs: np.ndarray | None = None


def evaluate(policy: PolicyModel, obs: np.ndarray) -> PolicyEval:
    cache = diffcore.forward_cached(policy.spec, policy.params, obs)
    out = cache.output[0] if cache.squeeze else cache.output
    if policy.kind == "categorical":
        k = out.shape[-1]
        return PolicyEval(DistParams("categorical", probs=PROB_FLOOR + (1.0 - k * PROB_FLOOR) * out), cache, out)
    std = np.broadcast_to(np.exp(policy.log_std), out.shape).copy()
    return PolicyEval(DistParams("gaussian", mean=out, std=std), cache)


def dist_at(policy: PolicyModel, state: np.ndarray) -> DistParams:
    """Action distribution of ``policy`` at one state or a batch of states."""
    return evaluate(policy, state).dist


def policy_vjp(
    policy: PolicyModel,
    ev: PolicyEval,
    actions: Any,
    logp_weight: np.ndarray,
    ref: DistParams | None = None,
    kl_weight: np.ndarray | float = 0.0,
) -> np.ndarray:
    """Flat gradient of ``sum_i w_i log pi(a_i|s_i) + k_i KL(pi(.|s_i) || ref_i)``.

    ``ev`` must be the batched evaluation (2-D observations) of ``policy``.
    """
    dist = ev.dist
    w = np.asarray(logp_weight, dtype=np.float64)
    kw = np.broadcast_to(np.asarray(kl_weight, dtype=np.float64), w.shape)
    use_kl = ref is not None and np.any(kw != 0.0)
    if policy.kind == "categorical":
        a = _action_index(dist, actions)
        p = dist.probs
        # gradient with respect to the floored probabilities
        g = np.zeros_like(p)
        np.put_along_axis(g, a[:, None], (w / np.take_along_axis(p, a[:, None], axis=-1)[:, 0])[:, None], axis=-1)
        if use_kl:
            g += kw[:, None] * (np.log(p) - np.log(ref.probs) + 1.0)
        raw = ev.raw_probs
        c = 1.0 - p.shape[-1] * PROB_FLOOR
        g_logits = c * raw * (g - (raw * g).sum(axis=-1, keepdims=True))
        grad = diffcore.backward_from_cache(policy.spec, policy.params, ev.cache, g_logits, wrt_logits=True)
        return grad.values
    x = np.asarray(actions, dtype=np.float64)
    mu, sd = dist.mean, dist.std
    z = (x - mu) / sd
    g_mu = w[:, None] * z / sd
    g_logstd = w[:, None] * (z * z - 1.0)
    if use_kl:
        g_mu = g_mu + kw[:, None] * (mu - ref.mean) / ref.std**2
        g_logstd = g_logstd + kw[:, None] * ((sd / ref.std) ** 2 - 1.0)
    grad = diffcore.backward_from_cache(policy.spec, policy.params, ev.cache, g_mu)
    return np.concatenate([grad.values, g_logstd.sum(axis=0)])


@dataclass
class RatioResult:
    r: float
    grad: np.ndarray
    ref_floored: bool = False


def ratio(policy: PolicyModel, ref: DistParams, state: np.ndarray, action: Any) -> RatioResult:
    """Probability ratio pi(a|s) / ref(a) and its gradient over the policy parameters.

    Only the numerator depends on the parameters. A categorical reference
    probability below the floor is clamped and reported via ``ref_floored``.
    """
    floored = False
    if ref.kind == "categorical":
        a = int(_action_index(ref, action))
        if ref.probs[a] < PROB_FLOOR:
            probs = ref.probs.copy()
            probs[a] = PROB_FLOOR
            ref = DistParams("categorical", probs=probs)
            floored = True
    ev = evaluate(policy, np.asarray(state, dtype=np.float64)[None, :])
    batched_action = np.asarray(action)[None, ...]
    lp = log_prob(ev.dist, batched_action)[0]
    r = math.exp(lp - log_prob(ref, action))
    grad = policy_vjp(policy, ev, batched_action, np.array([r]))
    return RatioResult(r, grad, floored)
