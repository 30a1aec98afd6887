"""Generation-structured replay buffer and the offline dataset file format.

The buffer holds at most ``M`` generations, each the complete set of
transitions gathered under one frozen policy. Generations enter and leave
atomically.
"""

from __future__ import annotations

import json
import os
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np

from exoppo.diffcore import atomic_write_bytes
from exoppo.errors import ConfigurationError, FileFormatError, InputError
from exoppo.policy import DistParams, concat

DATA_MAGIC = b"EXOPPO-DATA-v1\n"


@dataclass
class Transition:
    obs: np.ndarray
    action: Any
    reward: float
    ref_dist: DistParams
    advantage: float
    value_target: float
    generation_id: int


@dataclass
class TransitionBatch:
    """Column-oriented storage for many transitions."""

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    ref: DistParams
    advantages: np.ndarray
    value_targets: np.ndarray
    generation_ids: np.ndarray

    def __len__(self) -> int:
        return self.obs.shape[0]

    def take(self, idx: np.ndarray) -> "TransitionBatch":
        return TransitionBatch(
            self.obs[idx],
            self.actions[idx],
            self.rewards[idx],
            self.ref[idx],
            self.advantages[idx],
            self.value_targets[idx],
            self.generation_ids[idx],
        )

    @classmethod
    def concatenate(cls, batches: Sequence["TransitionBatch"]) -> "TransitionBatch":
        return cls(
            np.concatenate([b.obs for b in batches]),
            np.concatenate([b.actions for b in batches]),
            np.concatenate([b.rewards for b in batches]),
            concat([b.ref for b in batches]),
            np.concatenate([b.advantages for b in batches]),
            np.concatenate([b.value_targets for b in batches]),
            np.concatenate([b.generation_ids for b in batches]),
        )

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition]) -> "TransitionBatch":
        if not transitions:
            raise InputError("cannot build a batch from zero transitions")
        refs = [t.ref_dist for t in transitions]
        if refs[0].kind == "categorical":
            ref = DistParams("categorical", probs=np.stack([d.probs for d in refs]))
            actions = np.array([int(t.action) for t in transitions], dtype=np.int64)
        else:
            ref = DistParams("gaussian", mean=np.stack([d.mean for d in refs]), std=np.stack([d.std for d in refs]))
            actions = np.stack([np.asarray(t.action, dtype=np.float64) for t in transitions])
        return cls(
            np.stack([np.asarray(t.obs, dtype=np.float64) for t in transitions]),
            actions,
            np.array([t.reward for t in transitions], dtype=np.float64),
            ref,
            np.array([t.advantage for t in transitions], dtype=np.float64),
            np.array([t.value_target for t in transitions], dtype=np.float64),
            np.array([t.generation_id for t in transitions], dtype=np.int64),
        )

    def to_transitions(self) -> list[Transition]:
        out = []
        for i in range(len(self)):
            action = int(self.actions[i]) if self.ref.kind == "categorical" else self.actions[i].copy()
            out.append(
                Transition(
                    self.obs[i].copy(),
                    action,
                    float(self.rewards[i]),
                    self.ref[i],
                    float(self.advantages[i]),
                    float(self.value_targets[i]),
                    int(self.generation_ids[i]),
                )
            )
        return out


class GenerationBuffer:
    """FIFO queue of at most ``M`` generations.

    ``nu`` optionally weights generations for sampling, ordered oldest to
    newest; when fewer than ``M`` generations are stored the newest entries of
    the weight vector apply. ``None`` means uniform.
    """

    def __init__(self, M: int, nu: Sequence[float] | None = None) -> None:
        if M < 1:
            raise ConfigurationError(f"M must be >= 1, got {M}")
        if nu is not None:
            nu = np.asarray(nu, dtype=np.float64)
            if nu.shape != (M,) or np.any(nu < 0) or nu.sum() <= 0:
                raise ConfigurationError(f"nu must be {M} non-negative weights with positive sum")
        self.M = M
        self._nu_weights = nu
        self.generations: deque[tuple[int, TransitionBatch]] = deque()
        self.snapshot_ids: dict[int, Any] = {}

    def __len__(self) -> int:
        return sum(len(b) for _, b in self.generations)

    @property
    def generation_ids(self) -> list[int]:
        return [gid for gid, _ in self.generations]

    @property
    def nu(self) -> np.ndarray:
        k = len(self.generations)
        if k == 0:
            return np.zeros(0)
        if self._nu_weights is None:
            return np.full(k, 1.0 / k)
        w = self._nu_weights[self.M - k :]
        if w.sum() <= 0:
            raise ConfigurationError("nu assigns zero weight to every stored generation")
        return w / w.sum()

    @property
    def uniform(self) -> bool:
        return self._nu_weights is None or bool(np.all(self._nu_weights == self._nu_weights[0]))

    def push_generation(self, batch: TransitionBatch, policy_snapshot_id: Any = None) -> None:
        ids = np.unique(batch.generation_ids)
        if ids.size != 1:
            raise InputError(f"a generation must carry a single generation_id, got {ids.tolist()}")
        if self.generations and len(batch) != len(self.generations[-1][1]):
            raise InputError("all generations must have equal size")
        gid = int(ids[0])
        self.generations.append((gid, batch))
        self.snapshot_ids[gid] = policy_snapshot_id
        while len(self.generations) > self.M:
            old, _ = self.generations.popleft()
            self.snapshot_ids.pop(old, None)

    def newest(self) -> TransitionBatch:
        if not self.generations:
            raise InputError("buffer is empty")
        return self.generations[-1][1]

    def pooled(self) -> TransitionBatch:
        if not self.generations:
            raise InputError("buffer is empty")
        return TransitionBatch.concatenate([b for _, b in self.generations])

    def sample_minibatches(
        self, batch_size: int, epochs: int, rng: np.random.Generator
    ) -> Iterator[TransitionBatch]:
        """Yield minibatches for ``epochs`` passes.

        Uniform weights: every epoch is a shuffled partition of all stored
        transitions. Otherwise each draw picks a generation by ``nu`` and a
        transition uniformly inside it (with replacement), with the same number
        of draws per epoch.
        """
        if not self.generations:
            raise InputError("cannot sample from an empty buffer")
        pool = self.pooled()
        n = len(pool)
        if batch_size < 1 or batch_size > n:
            raise InputError(f"batch_size {batch_size} must lie in [1, {n}] (buffer size)")
        if self.uniform:
            for _ in range(epochs):
                perm = rng.permutation(n)
                for start in range(0, n, batch_size):
                    yield pool.take(perm[start : start + batch_size])
            return
        nu = self.nu
        sizes = np.array([len(b) for _, b in self.generations])
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        for _ in range(epochs):
            gens = rng.choice(len(sizes), size=n, p=nu)
            within = (rng.random(n) * sizes[gens]).astype(np.int64)
            idx = offsets[gens] + within
            for start in range(0, n, batch_size):
                yield pool.take(idx[start : start + batch_size])


def push_generation(buf: GenerationBuffer, batch: TransitionBatch, policy_snapshot_id: Any = None) -> GenerationBuffer:
    buf.push_generation(batch, policy_snapshot_id)
    return buf


def sample_minibatches(
    buf: GenerationBuffer, batch_size: int, epochs: int, rng: np.random.Generator
) -> Iterator[TransitionBatch]:
    return buf.sample_minibatches(batch_size, epochs, rng)


def effective_env_count(n_on: int, M: int) -> int:
    """Parallel environments for the M-generation setup that match ``n_on`` on-policy envs."""
    if M < 1 or n_on < 1:
        raise ConfigurationError("n_on and M must be positive")
    if n_on % M:
        divisors = [d for d in range(1, n_on + 1) if n_on % d == 0]
        nearest = min(divisors, key=lambda d: (abs(d - M), d))
        raise ConfigurationError(f"M={M} does not divide n_on={n_on}; nearest valid M is {nearest}")
    return n_on // M


# -- dataset files ------------------------------------------------------------


def _record_dtype(obs_dim: int, action_width: int, dist_width: int) -> np.dtype:
    return np.dtype(
        [
            ("obs", "<f8", (obs_dim,)),
            ("action", "<f8", (action_width,)),
            ("reward", "<f8"),
            ("ref", "<f8", (dist_width,)),
            ("advantage", "<f8"),
            ("value_target", "<f8"),
            ("generation_id", "<i8"),
        ]
    )


def write_dataset(
    path: str | os.PathLike,
    batch: TransitionBatch | None,
    *,
    env_id: str,
    variant: str,
    obs_dim: int,
    action_width: int,
    dist_width: int,
    manifest: dict[str, Any] | None = None,
) -> None:
    """Write an EXOPPO-DATA-v1 file: magic line, JSON header line, packed records."""
    count = 0 if batch is None else len(batch)
    header = {
        "env_id": env_id,
        "variant": variant,
        "obs_dim": obs_dim,
        "action_width": action_width,
        "dist_width": dist_width,
        "count": count,
        "manifest": manifest or {},
    }
    dtype = _record_dtype(obs_dim, action_width, dist_width)
    records = np.zeros(count, dtype=dtype)
    if count:
        records["obs"] = batch.obs
        records["action"] = np.asarray(batch.actions, dtype=np.float64).reshape(count, action_width)
        records["reward"] = batch.rewards
        records["ref"] = batch.ref.to_array()
        records["advantage"] = batch.advantages
        records["value_target"] = batch.value_targets
        records["generation_id"] = batch.generation_ids
    blob = DATA_MAGIC + json.dumps(header, sort_keys=True).encode() + b"\n" + records.tobytes()
    atomic_write_bytes(path, blob)


def read_dataset(path: str | os.PathLike, allow_empty: bool = False) -> tuple[dict[str, Any], TransitionBatch | None]:
    raw = Path(path).read_bytes()
    if not raw.startswith(DATA_MAGIC):
        raise FileFormatError(f"{path}: missing EXOPPO-DATA-v1 magic")
    rest = raw[len(DATA_MAGIC) :]
    line, sep, body = rest.partition(b"\n")
    if not sep:
        raise FileFormatError(f"{path}: truncated header")
    try:
        header = json.loads(line)
        dtype = _record_dtype(header["obs_dim"], header["action_width"], header["dist_width"])
        count = int(header["count"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FileFormatError(f"{path}: bad header: {exc}") from exc
    if len(body) != count * dtype.itemsize:
        raise FileFormatError(f"{path}: expected {count} records, found {len(body)} bytes")
    if count == 0:
        if allow_empty:
            return header, None
        raise FileFormatError(f"{path}: dataset contains no transitions")
    rec = np.frombuffer(body, dtype=dtype, count=count)
    variant = header["variant"]
    actions = rec["action"].copy()
    if variant == "categorical":
        actions = actions[:, 0].astype(np.int64)
    batch = TransitionBatch(
        rec["obs"].copy(),
        actions,
        rec["reward"].copy(),
        DistParams.from_array(variant, rec["ref"]),
        rec["advantage"].copy(),
        rec["value_target"].copy(),
        rec["generation_id"].copy(),
    )
    return header, batch
