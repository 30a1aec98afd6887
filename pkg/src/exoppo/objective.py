"""Surrogate objectives: the exponentially-edged extended ratio and PPO clipping.

``xi`` is the identity on [1 - eps, 1 + eps) and continues outside that band
with exponentially flattening edges, so it is C1, point-symmetric about r = 1
and within 1/alpha of the clipped ratio everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from exoppo import policy as pol
from exoppo.buffer import TransitionBatch
from exoppo.errors import ConfigurationError, InputError
from exoppo.policy import PolicyModel

OBJECTIVES = ("exo", "clip")


@dataclass(frozen=True)
class SurrogateConfig:
    epsilon: float = 0.2
    alpha: float = 5.0
    beta: float = 1.0
    objective: str = "exo"

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ConfigurationError(f"epsilon must be > 0, got {self.epsilon}")
        if self.alpha <= 0:
            raise ConfigurationError(f"alpha must be > 0, got {self.alpha}")
        if self.beta < 0:
            raise ConfigurationError(f"beta must be >= 0, got {self.beta}")
        if self.objective not in OBJECTIVES:
            raise ConfigurationError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")

    @property
    def kl_weight(self) -> float:
        # the clipped baseline carries no KL penalty
        return 0.0 if self.objective == "clip" else self.beta


def default_beta(discrete: bool) -> float:
    return 1.0 if discrete else 0.1


def _check_ratio(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if np.any(~(r > 0)):
        raise InputError("probability ratio must be strictly positive")
    return r


def _scalar(x: np.ndarray) -> np.ndarray | float:
    return float(x) if np.ndim(x) == 0 else x


def xi(r, cfg: SurrogateConfig = SurrogateConfig()):
    """Extended ratio. Knots belong to the upper piece: r = 1 + eps uses the upper edge."""
    r = _check_ratio(r)
    eps, a = cfg.epsilon, cfg.alpha
    phi_plus = np.exp(np.minimum(a * (eps + (r - 1.0)), 0.0))
    phi_minus = np.exp(np.minimum(a * (eps - (r - 1.0)), 0.0))
    lower = (1.0 - eps) - (1.0 - phi_plus) / a
    upper = (1.0 + eps) + (1.0 - phi_minus) / a
    out = np.where(r < 1.0 - eps, lower, np.where(r >= 1.0 + eps, upper, r))
    return _scalar(out)


def xi_grad(r, cfg: SurrogateConfig = SurrogateConfig()):
    r = _check_ratio(r)
    eps, a = cfg.epsilon, cfg.alpha
    phi_plus = np.exp(np.minimum(a * (eps + (r - 1.0)), 0.0))
    phi_minus = np.exp(np.minimum(a * (eps - (r - 1.0)), 0.0))
    out = np.where(r < 1.0 - eps, phi_plus, np.where(r >= 1.0 + eps, phi_minus, 1.0))
    return _scalar(out)


def clip_ratio(r, epsilon: float = 0.2):
    return _scalar(np.clip(np.asarray(r, dtype=np.float64), 1.0 - epsilon, 1.0 + epsilon))


def clip_ratio_grad(r, epsilon: float = 0.2):
    r = np.asarray(r, dtype=np.float64)
    return _scalar(np.where((r >= 1.0 - epsilon) & (r <= 1.0 + epsilon), 1.0, 0.0))


def clip_surrogate(r, advantage, cfg: SurrogateConfig = SurrogateConfig()):
    """min(r A, clip(r, 1 - eps, 1 + eps) A)."""
    r = _check_ratio(r)
    adv = np.asarray(advantage, dtype=np.float64)
    return _scalar(np.minimum(r * adv, np.clip(r, 1.0 - cfg.epsilon, 1.0 + cfg.epsilon) * adv))


def _clip_surrogate_grad(r: np.ndarray, adv: np.ndarray, eps: float) -> np.ndarray:
    # derivative w.r.t. r of the min(); the unclipped branch is active when it is the smaller one
    active = r * adv <= np.clip(r, 1.0 - eps, 1.0 + eps) * adv
    return np.where(active, adv, 0.0)


def ratio_diagnostic(ratios) -> float:
    """Mean absolute log-ratio over a batch."""
    r = _check_ratio(ratios)
    if r.size == 0:
        return 0.0
    return float(np.mean(np.abs(np.log(r))))


@dataclass
class ObjectiveReport:
    value: float
    grad: np.ndarray = field(repr=False)
    kl_mean: float = 0.0
    y: float = 0.0
    outside_frac: float = 0.0
    n_samples: int = 0
    n_excluded: int = 0


def normalize(adv: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    if adv.shape[0] < 2:
        return adv - adv.mean()
    return (adv - adv.mean()) / (adv.std() + eps)


def surrogate_objective(
    policy: PolicyModel,
    batch: TransitionBatch,
    cfg: SurrogateConfig = SurrogateConfig(),
    *,
    normalize_advantages: bool = False,
) -> ObjectiveReport:
    """Batch mean of the per-sample surrogate minus beta * KL, with its gradient.

    Advantages are constants. Samples whose ratio is not finite are dropped
    and counted in ``n_excluded``.
    """
    if len(batch) == 0:
        raise InputError("objective needs a non-empty minibatch")
    ev = pol.evaluate(policy, batch.obs)
    with np.errstate(over="ignore", invalid="ignore"):
        log_r = pol.log_prob(ev.dist, batch.actions) - pol.log_prob(batch.ref, batch.actions)
        r = np.exp(log_r)
    keep = np.isfinite(r) & (r > 0)
    n_excluded = int((~keep).sum())
    if n_excluded:
        idx = np.flatnonzero(keep)
        if idx.size == 0:
            raise InputError("every sample in the minibatch has a non-finite ratio")
        batch = batch.take(idx)
        ev = pol.evaluate(policy, batch.obs)
        r, log_r = r[idx], log_r[idx]
    n = len(batch)
    adv = normalize(batch.advantages) if normalize_advantages else batch.advantages
    beta = cfg.kl_weight
    kl = pol.kl(ev.dist, batch.ref) if beta > 0 else np.zeros(n)
    kl = np.atleast_1d(kl)

    if cfg.objective == "exo":
        per_sample = xi(r, cfg) * adv
        dsurr_dr = xi_grad(r, cfg) * adv
    else:
        per_sample = clip_surrogate(r, adv, cfg)
        dsurr_dr = _clip_surrogate_grad(r, adv, cfg.epsilon)
    per_sample = np.atleast_1d(per_sample) - beta * kl
    # dr/dtheta = r * dlogpi/dtheta
    grad = pol.policy_vjp(policy, ev, batch.actions, np.atleast_1d(dsurr_dr) * r / n, batch.ref, -beta / n)
    outside = (r < 1.0 - cfg.epsilon) | (r > 1.0 + cfg.epsilon)
    return ObjectiveReport(
        value=float(per_sample.mean()),
        grad=grad,
        kl_mean=float(kl.mean()),
        y=float(np.mean(np.abs(log_r))),
        outside_frac=float(outside.mean()),
        n_samples=n,
        n_excluded=n_excluded,
    )


def exo_objective(
    policy: PolicyModel,
    batch: TransitionBatch,
    cfg: SurrogateConfig = SurrogateConfig(),
    *,
    normalize_advantages: bool = False,
) -> ObjectiveReport:
    if cfg.objective != "exo":
        cfg = SurrogateConfig(cfg.epsilon, cfg.alpha, cfg.beta, "exo")
    return surrogate_objective(policy, batch, cfg, normalize_advantages=normalize_advantages)


def clip_objective(
    policy: PolicyModel,
    batch: TransitionBatch,
    cfg: SurrogateConfig = SurrogateConfig(objective="clip"),
    *,
    normalize_advantages: bool = False,
) -> ObjectiveReport:
    if cfg.objective != "clip":
        cfg = SurrogateConfig(cfg.epsilon, cfg.alpha, cfg.beta, "clip")
    return surrogate_objective(policy, batch, cfg, normalize_advantages=normalize_advantages)


def curves(epsilon: float, alphas: list[float], grid: np.ndarray) -> list[dict[str, float]]:
    """Rows of (alpha, r, xi, xi', clip, clip') for plotting surrogate shapes."""
    rows = []
    for a in alphas:
        cfg = SurrogateConfig(epsilon=epsilon, alpha=a)
        for r in grid:
            # r = 0 is outside xi's domain; report the limit from the right
            rr = max(float(r), 1e-12)
            rows.append(
                {
                    "alpha": float(a),
                    "r": float(r),
                    "xi": xi(rr, cfg),
                    "xi_grad": xi_grad(rr, cfg),
                    "clip": clip_ratio(r, epsilon),
                    "clip_grad": clip_ratio_grad(r, epsilon),
                }
            )
    return rows
