"""Training loops: generation-buffer online training and offline training.

Online loop per round: roll out ``steps_per_env`` ticks of the env pool with
the frozen current policy, compute GAE once, push the generation into the
buffer (evicting the oldest beyond ``M``), then run ``epochs`` shuffled passes
of minibatch ascent on the surrogate and descent on the value MSE.
"""

from __future__ import annotations

import copy
import dataclasses
import datetime as _dt
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from exoppo import __version__, advantage, diffcore
from exoppo import policy as pol
from exoppo.advantage import GaeConfig, TrajectorySegment, ValueNet
from exoppo.buffer import GenerationBuffer, TransitionBatch, read_dataset, write_dataset
from exoppo.config import OfflineConfig, TrainConfig, to_dict
from exoppo.diffcore import OptimState
from exoppo.envs import EnvPool, EnvSpec, make_env
from exoppo.errors import ConfigurationError, TrainingError
from exoppo.objective import SurrogateConfig, default_beta, surrogate_objective
from exoppo.policy import DistParams, PolicyModel

log = logging.getLogger(__name__)

DISCRETE_DEFAULTS = {"lr": 2.5e-4, "decay_factor": 0.99, "decay_interval": 5_000}
CONTINUOUS_DEFAULTS = {"lr": 1.5e-4, "decay_factor": 0.98, "decay_interval": 1_000_000}
EVAL_SEED_OFFSET = 1_000_003


def env_spec_of(cfg: TrainConfig) -> EnvSpec:
    return EnvSpec(
        cfg.env.id,
        cfg.env.max_episode_steps,
        cfg.env.reward_scale,
        cfg.env.grid_size,
    )


def resolve(cfg: TrainConfig) -> TrainConfig:
    """Fill variant-dependent defaults and validate cross-field constraints."""
    cfg = copy.deepcopy(cfg)
    if cfg.env.id is None:
        raise ConfigurationError("missing required config key 'env.id'")
    spec = env_spec_of(cfg)
    cfg.env.max_episode_steps = spec.max_episode_steps
    defaults = DISCRETE_DEFAULTS if spec.discrete else CONTINUOUS_DEFAULTS
    if cfg.surrogate.beta is None:
        cfg.surrogate.beta = default_beta(spec.discrete)
    cfg.surrogate.beta = float(cfg.surrogate.beta)
    if cfg.optim.policy_lr is None:
        cfg.optim.policy_lr = defaults["lr"]
    if cfg.optim.value_lr is None:
        cfg.optim.value_lr = cfg.optim.policy_lr
    if cfg.optim.decay_factor is None:
        cfg.optim.decay_factor = defaults["decay_factor"]
    if cfg.optim.decay_interval is None:
        cfg.optim.decay_interval = defaults["decay_interval"]
    if cfg.buffer.M < 1:
        raise ConfigurationError(f"buffer.M must be >= 1, got {cfg.buffer.M}")
    if cfg.env.n_envs < 1 or cfg.rollout.steps_per_env < 1:
        raise ConfigurationError("env.n_envs and rollout.steps_per_env must be >= 1")
    per_gen = cfg.env.n_envs * cfg.rollout.steps_per_env
    if cfg.update.batch_size < 1 or per_gen % cfg.update.batch_size:
        raise ConfigurationError(
            f"n_envs * steps_per_env = {per_gen} must be divisible by update.batch_size = {cfg.update.batch_size}"
        )
    if cfg.update.epochs < 1:
        raise ConfigurationError("update.epochs must be >= 1")
    surrogate_config(cfg)  # validates epsilon/alpha/objective
    GaeConfig(cfg.gae.gamma, cfg.gae.lam)
    return cfg


def surrogate_config(cfg: TrainConfig | OfflineConfig) -> SurrogateConfig:
    s = cfg.surrogate
    return SurrogateConfig(float(s.epsilon), float(s.alpha), float(s.beta), s.objective)


# -- learner state --------------------------------------------------------------


@dataclass
class Learner:
    policy: PolicyModel
    value_net: ValueNet
    policy_opt: OptimState
    value_opt: OptimState

    def clone(self) -> "Learner":
        return Learner(
            self.policy.copy(), self.value_net.copy(), copy.deepcopy(self.policy_opt), copy.deepcopy(self.value_opt)
        )

    def restore(self, other: "Learner") -> None:
        self.policy, self.value_net = other.policy, other.value_net
        self.policy_opt, self.value_opt = other.policy_opt, other.value_opt


def build_learner(cfg: TrainConfig, spec: EnvSpec, rng: np.random.Generator) -> Learner:
    hidden = tuple(cfg.network.hidden)
    if spec.discrete:
        policy = PolicyModel.build("categorical", spec.obs_dim, spec.action_dim, rng, hidden, cfg.network.activation)
    else:
        low, high = spec.action_bounds
        init_std = cfg.network.init_std_scale * (high - low) / 2.0
        policy = PolicyModel.build(
            "gaussian", spec.obs_dim, spec.action_dim, rng, hidden, cfg.network.activation, init_std
        )
    value_net = ValueNet.build(spec.obs_dim, rng, hidden, cfg.network.activation)
    o = cfg.optim
    return Learner(
        policy,
        value_net,
        OptimState.create(policy.n_params, o.policy_lr, o.decay_factor, o.decay_interval),
        OptimState.create(len(value_net.params), o.value_lr, o.decay_factor, o.decay_interval),
    )


# -- collection -----------------------------------------------------------------


@dataclass
class Generation:
    batch: TransitionBatch
    segments: list[TrajectorySegment]
    episode_returns: list[float]
    env_steps: int
    gae_calls: int
    gae_steps: int


def collect_generation(
    policy: PolicyModel,
    value_net: ValueNet,
    pool: EnvPool,
    T: int,
    gae_cfg: GaeConfig,
    generation_id: int,
    rng: np.random.Generator,
) -> Generation:
    """Roll out ``T`` ticks of every env with a frozen policy and attach GAE advantages."""
    n = pool.n_envs
    obs_buf = np.empty((T, n, pool.spec.obs_dim))
    values = np.empty((T, n))
    rewards = np.empty((T, n))
    terminated = np.zeros((T, n), dtype=bool)
    truncated = np.zeros((T, n), dtype=bool)
    trunc_values = np.zeros((T, n))
    dists: list[DistParams] = []
    actions = []
    finished_before = len(pool.finished_returns)

    for t in range(T):
        obs = pool.obs.copy()
        obs_buf[t] = obs
        dist = pol.dist_at(policy, obs)
        act = pol.sample(dist, rng)
        dists.append(dist)
        actions.append(act)
        values[t] = value_net(obs)
        results = pool.step(act)
        trunc_idx = []
        for i, res in enumerate(results):
            rewards[t, i] = res.reward
            terminated[t, i] = res.terminated
            truncated[t, i] = res.truncated
            if res.truncated:
                trunc_idx.append(i)
        if trunc_idx:
            final = np.stack([results[i].next_obs for i in trunc_idx])
            trunc_values[t, trunc_idx] = value_net(final)
    last_values = value_net(pool.obs)

    acts = np.stack(actions)  # (T, n) or (T, n, d)
    stacked = pol.stack(dists)  # batch shape (T, n)
    segments: list[TrajectorySegment] = []
    adv_parts, target_parts, idx_parts = [], [], []
    gae_calls = gae_steps = 0
    for i in range(n):
        start = 0
        for t in range(T):
            end_here = terminated[t, i] or truncated[t, i] or t == T - 1
            if not end_here:
                continue
            sl = slice(start, t + 1)
            if terminated[t, i]:
                boot = 0.0
            elif truncated[t, i]:
                boot = trunc_values[t, i]
            else:
                boot = last_values[i]
            seg = TrajectorySegment(
                rewards[sl, i],
                values[sl, i],
                terminated[sl, i],
                float(boot),
                obs=obs_buf[sl, i],
                actions=acts[sl, i],
                dists=stacked[sl, i],
                truncated_end=bool(truncated[t, i]),
            )
            adv = advantage.gae(seg, gae_cfg)
            gae_calls += 1
            gae_steps += len(seg)
            segments.append(seg)
            adv_parts.append(adv)
            target_parts.append(advantage.value_targets(seg, adv))
            idx_parts.append(np.arange(start, t + 1) * n + i)
            start = t + 1

    order = np.concatenate(idx_parts)  # flat (t * n + i) index of each stored row
    flat_obs = obs_buf.reshape(T * n, -1)
    flat_acts = acts.reshape(T * n, *acts.shape[2:])
    flat_ref = DistParams.from_array(stacked.kind, stacked.to_array().reshape(T * n, -1))
    batch = TransitionBatch(
        flat_obs[order],
        flat_acts[order],
        rewards.reshape(-1)[order],
        flat_ref[order],
        np.concatenate(adv_parts),
        np.concatenate(target_parts),
        np.full(T * n, generation_id, dtype=np.int64),
    )
    return Generation(
        batch,
        segments,
        pool.finished_returns[finished_before:],
        T * n,
        gae_calls,
        gae_steps,
    )


# -- update -----------------------------------------------------------------------


@dataclass
class RoundReport:
    objective: float
    y: float
    kl_mean: float
    outside_frac: float
    value_loss: float
    y_newest_start: float
    y_end: float
    y_end_by_age: list[float]
    policy_lr: float
    n_minibatches: int
    n_excluded: int


def buffer_log_ratios(policy: PolicyModel, batch: TransitionBatch) -> np.ndarray:
    dist = pol.dist_at(policy, batch.obs)
    return pol.log_prob(dist, batch.actions) - pol.log_prob(batch.ref, batch.actions)


def buffer_ratios(policy: PolicyModel, batch: TransitionBatch) -> np.ndarray:
    with np.errstate(over="ignore", under="ignore"):
        return np.exp(buffer_log_ratios(policy, batch))


def _y(log_r: np.ndarray) -> float:
    # same as ratio_diagnostic, but stays finite when exp(log r) would underflow
    log_r = log_r[np.isfinite(log_r)]
    return float(np.mean(np.abs(log_r))) if log_r.size else 0.0


def update_round(
    learner: Learner,
    buffer: GenerationBuffer,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> RoundReport:
    """``epochs`` passes of minibatch ascent on the surrogate and descent on value MSE.

    On a numerical failure the learner is restored to its pre-round state and
    the :class:`TrainingError` propagates.
    """
    if len(buffer) == 0:
        raise TrainingError("update_round called with an empty buffer")
    scfg = surrogate_config(cfg)
    backup = learner.clone()
    y_start = _y(buffer_log_ratios(learner.policy, buffer.newest()))
    lr = learner.policy_opt.effective_lr
    stats = {"objective": [], "y": [], "kl": [], "outside": [], "vloss": []}
    n_excluded = 0
    try:
        for mb in buffer.sample_minibatches(cfg.update.batch_size, cfg.update.epochs, rng):
            rep = surrogate_objective(
                learner.policy, mb, scfg, normalize_advantages=cfg.update.normalize_advantages
            )
            if not math.isfinite(rep.value):
                raise TrainingError("non-finite surrogate value", step=learner.policy_opt.step)
            flat, learner.policy_opt = diffcore.optimizer_step(
                learner.policy_opt, learner.policy.flat(), rep.grad, ascent=True
            )
            learner.policy.set_flat(flat)
            vl = advantage.value_loss_grad(learner.value_net, mb.obs, mb.value_targets)
            if not math.isfinite(vl.loss):
                raise TrainingError("non-finite value loss", step=learner.value_opt.step)
            vflat, learner.value_opt = diffcore.optimizer_step(
                learner.value_opt, learner.value_net.params.values, vl.grad, ascent=False
            )
            learner.value_net.params = diffcore.ParamVector(vflat, learner.value_net.params.shapes)
            stats["objective"].append(rep.value)
            stats["y"].append(rep.y)
            stats["kl"].append(rep.kl_mean)
            stats["outside"].append(rep.outside_frac)
            stats["vloss"].append(vl.loss)
            n_excluded += rep.n_excluded
    except TrainingError:
        learner.restore(backup)
        raise

    by_age = []
    all_r = []
    for _, gen in reversed(buffer.generations):
        log_r = buffer_log_ratios(learner.policy, gen)
        all_r.append(log_r)
        by_age.append(_y(log_r))
    return RoundReport(
        objective=float(np.mean(stats["objective"])),
        y=float(np.mean(stats["y"])),
        kl_mean=float(np.mean(stats["kl"])),
        outside_frac=float(np.mean(stats["outside"])),
        value_loss=float(np.mean(stats["vloss"])),
        y_newest_start=y_start,
        y_end=_y(np.concatenate(all_r)),
        y_end_by_age=by_age,
        policy_lr=lr,
        n_minibatches=len(stats["y"]),
        n_excluded=n_excluded,
    )


# -- evaluation -------------------------------------------------------------------


def evaluate(policy: PolicyModel, spec: EnvSpec, episodes: int, seed: int) -> np.ndarray:
    """Unscaled returns of ``episodes`` greedy (mode/mean action) episodes run in lock-step."""
    envs = [make_env(spec, seed + k) for k in range(episodes)]
    obs = np.stack([env.reset() for env in envs])
    returns = np.zeros(episodes)
    active = np.ones(episodes, dtype=bool)
    while active.any():
        idx = np.flatnonzero(active)
        acts = pol.mode(pol.dist_at(policy, obs[idx]))
        for j, k in enumerate(idx):
            res = envs[k].step(acts[j])
            returns[k] += res.reward
            obs[k] = res.next_obs
            if res.done:
                active[k] = False
    return returns / spec.reward_scale


# -- full online run ----------------------------------------------------------------


@dataclass
class Counters:
    rounds: int = 0
    env_steps: int = 0
    gae_calls: int = 0
    gae_steps: int = 0
    gae_passes: int = 0
    fresh_per_round: list[int] = field(default_factory=list)


@dataclass
class TrainResult:
    config: TrainConfig
    metrics: list[dict[str, Any]]
    learner: Learner
    counters: Counters
    final_eval: np.ndarray
    run_dir: Path | None = None


def _fmt(x: Any) -> Any:
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def metric_event(step: int, event: str, generation: int, **fields: Any) -> dict[str, Any]:
    base = {
        "step": step,
        "event": event,
        "return_mean": None,
        "return_std": None,
        "y": None,
        "kl_mean": None,
        "outside_frac": None,
        "lr": None,
        "generation": generation,
    }
    base.update(fields)
    return {k: _fmt(v) for k, v in base.items()}


def _streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(3)
    return {
        "init": np.random.default_rng(children[0]),
        "act": np.random.default_rng(children[1]),
        "shuffle": np.random.default_rng(children[2]),
    }


def checkpoint_payload(
    cfg: TrainConfig, learner: Learner, rngs: dict[str, np.random.Generator], counters: Counters, generation: int
) -> dict[str, Any]:
    return {
        "kind": "online",
        "version": __version__,
        "config": to_dict(cfg),
        "policy": learner.policy.to_dict(),
        "value": {"spec": learner.value_net.spec, "params": learner.value_net.params},
        "policy_opt": learner.policy_opt,
        "value_opt": learner.value_opt,
        "rng": {k: g.bit_generator.state for k, g in rngs.items()},
        "generation": generation,
        "env_steps": counters.env_steps,
    }


def load_policy(path: str | os.PathLike) -> tuple[PolicyModel, ValueNet | None, dict[str, Any]]:
    ck = diffcore.load_checkpoint(path)
    policy = PolicyModel.from_dict(ck["policy"])
    value = ck.get("value")
    value_net = ValueNet(value["spec"], value["params"]) if value else None
    return policy, value_net, ck


def write_manifest(run_dir: Path, cfg: Any, seed: int, extra: dict[str, Any] | None = None) -> None:
    manifest = {
        "config": to_dict(cfg),
        "seed": seed,
        "code_version": __version__,
        "output_dir": str(run_dir),
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        **(extra or {}),
    }
    diffcore.atomic_write_bytes(run_dir / "manifest.json", (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())


class _MetricsSink:
    def __init__(self, path: Path | None) -> None:
        self.path = path
        self.rows: list[dict[str, Any]] = []
        if path is not None:
            path.write_text("")

    def emit(self, row: dict[str, Any]) -> None:
        self.rows.append(row)
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(json.dumps(row, sort_keys=True) + "\n")


def train(
    cfg: TrainConfig,
    run_dir: str | os.PathLike | None = None,
    on_round: Callable[[int, RoundReport], None] | None = None,
) -> TrainResult:
    """Run the online loop until the interaction budget is spent."""
    cfg = resolve(cfg)
    spec = env_spec_of(cfg)
    seed = cfg.env.seed
    rngs = _streams(seed)
    learner = build_learner(cfg, spec, rngs["init"])
    pool = EnvPool(spec, cfg.env.n_envs, seed)
    buffer = GenerationBuffer(cfg.buffer.M, cfg.buffer.nu)
    gae_cfg = GaeConfig(cfg.gae.gamma, cfg.gae.lam)
    T = cfg.rollout.steps_per_env
    per_round = cfg.env.n_envs * T
    n_rounds = max(1, cfg.train.total_steps // per_round)

    out = Path(run_dir) if run_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out, cfg, seed, {"mode": "online"})
    sink = _MetricsSink(out / "metrics.jsonl" if out else None)
    ckpt_path = out / "checkpoint.ckpt" if out else None

    counters = Counters()
    eval_seed = seed + EVAL_SEED_OFFSET
    next_eval = cfg.train.eval_interval if cfg.train.eval_interval > 0 else None
    final_eval = np.zeros(0)
    for rnd in range(n_rounds):
        gen = collect_generation(learner.policy, learner.value_net, pool, T, gae_cfg, rnd, rngs["act"])
        counters.env_steps += gen.env_steps
        counters.fresh_per_round.append(gen.env_steps)
        counters.gae_calls += gen.gae_calls
        counters.gae_steps += gen.gae_steps
        counters.gae_passes += 1
        buffer.push_generation(gen.batch, policy_snapshot_id=rnd)
        try:
            report = update_round(learner, buffer, cfg, rngs["shuffle"])
        except TrainingError:
            log.error("round %d aborted; last checkpoint kept", rnd)
            raise
        counters.rounds += 1
        rets = gen.episode_returns
        sink.emit(
            metric_event(
                counters.env_steps,
                "round",
                rnd,
                return_mean=float(np.mean(rets)) if rets else None,
                return_std=float(np.std(rets)) if rets else None,
                y=report.y,
                kl_mean=report.kl_mean,
                outside_frac=report.outside_frac,
                lr=report.policy_lr,
                y_newest_start=report.y_newest_start,
                y_end=report.y_end,
                y_end_by_age=report.y_end_by_age,
                value_loss=report.value_loss,
                objective=report.objective,
                episodes=len(rets),
                buffer_size=len(buffer),
            )
        )
        if on_round is not None:
            on_round(rnd, report)
        last = rnd == n_rounds - 1
        if next_eval is not None and (counters.env_steps >= next_eval or last):
            final_eval = evaluate(learner.policy, spec, cfg.train.eval_episodes, eval_seed)
            sink.emit(
                metric_event(
                    counters.env_steps,
                    "eval",
                    rnd,
                    return_mean=float(final_eval.mean()),
                    return_std=float(final_eval.std()),
                )
            )
            while next_eval <= counters.env_steps:
                next_eval += cfg.train.eval_interval
        interval = cfg.train.checkpoint_interval
        if ckpt_path is not None and (last or (interval > 0 and (rnd + 1) % interval == 0)):
            diffcore.save_checkpoint(ckpt_path, checkpoint_payload(cfg, learner, rngs, counters, rnd))
    return TrainResult(cfg, sink.rows, learner, counters, final_eval, out)


# -- offline ------------------------------------------------------------------------


def sigma_schedule(sigma0: float, decay: float, floor: float, k: int) -> float:
    return max(sigma0 * decay**k, floor)


@dataclass
class OfflineResult:
    config: OfflineConfig
    metrics: list[dict[str, Any]]
    policy: PolicyModel
    sigmas: list[float]
    final_eval: np.ndarray
    header: dict[str, Any]


def offline_env_spec(header: dict[str, Any]) -> EnvSpec:
    m = header.get("manifest", {})
    return EnvSpec(header["env_id"], m.get("max_episode_steps"), m.get("reward_scale", 1.0), m.get("grid_size", 5))


def train_offline(cfg: OfflineConfig, run_dir: str | os.PathLike | None = None) -> OfflineResult:
    """Surrogate ascent against synthetic Gaussian references built from dataset actions.

    Each iteration is one shuffled pass over the dataset. The reference for a
    record is N(dataset action, sigma_k) with sigma_k decaying geometrically
    from ``sigma0`` down to ``sigma_min``.
    """
    header, data = read_dataset(cfg.dataset.path)
    if header["variant"] != "gaussian":
        raise ConfigurationError(
            f"offline training needs a continuous-action dataset, got variant {header['variant']!r}"
        )
    o = cfg.offline
    if not (0 < o.sigma_decay <= 1) or o.sigma_min <= 0 or o.sigma0 < o.sigma_min:
        raise ConfigurationError("need 0 < sigma_decay <= 1 and 0 < sigma_min <= sigma0")
    beta = default_beta(False) if cfg.surrogate.beta is None else float(cfg.surrogate.beta)
    scfg = SurrogateConfig(float(cfg.surrogate.epsilon), float(cfg.surrogate.alpha), beta, cfg.surrogate.objective)
    spec = offline_env_spec(header)
    rngs = _streams(o.seed)
    policy = PolicyModel.build(
        "gaussian", header["obs_dim"], header["action_width"], rngs["init"],
        tuple(cfg.network.hidden), cfg.network.activation, o.sigma0,
    )
    opt = OptimState.create(policy.n_params, o.lr)
    n = len(data)
    bs = min(o.batch_size, n)

    out = Path(run_dir) if run_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out, cfg, o.seed, {"mode": "offline", "dataset_header": header})
    sink = _MetricsSink(out / "metrics.jsonl" if out else None)
    eval_seed = o.seed + EVAL_SEED_OFFSET
    sigmas = []
    final_eval = np.zeros(0)
    for it in range(o.iterations):
        sigma = sigma_schedule(o.sigma0, o.sigma_decay, o.sigma_min, it)
        sigmas.append(sigma)
        ref = DistParams.gaussian(data.actions, np.full_like(data.actions, sigma))
        refd = dataclasses.replace(data, ref=ref)
        perm = rngs["shuffle"].permutation(n)
        ys, kls, outs = [], [], []
        for start in range(0, n - bs + 1, bs):
            mb = refd.take(perm[start : start + bs])
            rep = surrogate_objective(policy, mb, scfg, normalize_advantages=o.normalize_advantages)
            flat, opt = diffcore.optimizer_step(opt, policy.flat(), rep.grad, ascent=True)
            policy.set_flat(flat)
            ys.append(rep.y)
            kls.append(rep.kl_mean)
            outs.append(rep.outside_frac)
        row = metric_event(
            it, "round", it, y=float(np.mean(ys)), kl_mean=float(np.mean(kls)),
            outside_frac=float(np.mean(outs)), lr=opt.effective_lr, sigma=sigma,
        )
        sink.emit(row)
        last = it == o.iterations - 1
        if o.eval_episodes > 0 and (last or (o.eval_interval > 0 and (it + 1) % o.eval_interval == 0)):
            final_eval = evaluate(policy, spec, o.eval_episodes, eval_seed)
            sink.emit(
                metric_event(it, "eval", it, return_mean=float(final_eval.mean()), return_std=float(final_eval.std()))
            )
    if out is not None:
        diffcore.save_checkpoint(
            out / "checkpoint.ckpt",
            {"kind": "offline", "version": __version__, "config": to_dict(cfg), "policy": policy.to_dict(),
             "env": {"id": spec.id, "max_episode_steps": spec.max_episode_steps, "reward_scale": spec.reward_scale}},
        )
    return OfflineResult(cfg, sink.rows, policy, sigmas, final_eval, header)


# -- dataset generation -------------------------------------------------------------


def checkpoint_env_spec(ck: dict[str, Any]) -> EnvSpec:
    if ck.get("kind") == "offline":
        e = ck["env"]
        return EnvSpec(e["id"], e["max_episode_steps"], e["reward_scale"])
    env = ck["config"]["env"]
    return EnvSpec(env["id"], env["max_episode_steps"], env["reward_scale"], env.get("grid_size", 5))


def generate_dataset(
    checkpoint: str | os.PathLike,
    out_path: str | os.PathLike,
    episodes: int,
    seed: int = 0,
    gamma: float = 0.99,
    sample_actions: bool = False,
    env_spec: EnvSpec | None = None,
) -> dict[str, Any]:
    """Roll out a trained policy and write an EXOPPO-DATA-v1 file.

    Advantages are discounted Monte-Carlo returns (bootstrapped with the
    checkpoint's value net at truncation) minus the value estimate; when the
    checkpoint has no value net the baseline is zero. Returns the header.
    """
    policy, value_net, ck = load_policy(checkpoint)
    spec = env_spec or checkpoint_env_spec(ck)
    if (policy.kind == "categorical") != spec.discrete:
        raise ConfigurationError(f"checkpoint policy ({policy.kind}) does not match env {spec.id}")
    if policy.spec.input_dim != spec.obs_dim:
        raise ConfigurationError("checkpoint observation size does not match the env")
    rng = np.random.default_rng(seed)
    batches = []
    returns = []
    values_fn = value_net if value_net is not None else (lambda x: np.zeros(np.atleast_2d(x).shape[0]))
    for ep in range(episodes):
        env = make_env(spec, seed + ep)
        obs = env.reset()
        rows_obs, rows_act, rows_rew, dists = [], [], [], []
        while True:
            dist = pol.dist_at(policy, obs)
            act = pol.sample(dist, rng) if sample_actions else pol.mode(dist)
            res = env.step(act)
            rows_obs.append(obs)
            rows_act.append(act)
            rows_rew.append(res.reward)
            dists.append(dist)
            obs = res.next_obs
            if res.done:
                break
        o = np.stack(rows_obs)
        v = np.asarray(values_fn(o), dtype=np.float64).reshape(-1)
        boot = 0.0 if res.terminated else float(np.asarray(values_fn(obs[None, :])).reshape(-1)[0])
        g = np.empty(len(rows_rew))
        running = boot
        for t in range(len(rows_rew) - 1, -1, -1):
            running = rows_rew[t] + gamma * running
            g[t] = running
        returns.append(float(np.sum(rows_rew)) / spec.reward_scale)
        acts = np.array(rows_act, dtype=np.int64) if spec.discrete else np.stack(rows_act)
        batches.append(
            TransitionBatch(
                o, acts, np.array(rows_rew), pol.stack(dists), g - v, g, np.full(len(g), ep, dtype=np.int64)
            )
        )
    batch = TransitionBatch.concatenate(batches) if batches else None
    manifest = {
        "episodes": episodes,
        "return_mean": float(np.mean(returns)) if returns else None,
        "return_std": float(np.std(returns)) if returns else None,
        "advantage_method": "mc_return_minus_value" if value_net is not None else "mc_return",
        "gamma": gamma,
        "sample_actions": sample_actions,
        "seed": seed,
        "max_episode_steps": spec.max_episode_steps,
        "reward_scale": spec.reward_scale,
        "grid_size": spec.grid_size,
        "source_checkpoint": os.path.basename(str(checkpoint)),
    }
    variant = policy.kind
    write_dataset(
        out_path,
        batch,
        env_id=spec.id,
        variant=variant,
        obs_dim=spec.obs_dim,
        action_width=1 if spec.discrete else spec.action_dim,
        dist_width=spec.action_dim if spec.discrete else 2 * spec.action_dim,
        manifest=manifest,
    )
    header, _ = read_dataset(out_path, allow_empty=True)
    return header
