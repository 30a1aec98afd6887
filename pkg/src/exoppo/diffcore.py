"""Dense MLPs with hand-written reverse-mode gradients and an Adam-style optimizer.

Everything here runs in float64 on numpy. Parameters live in one flat vector so
optimizers, checkpoints and finite-difference checks can treat a network as a
single array; per-layer weights are views into it.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from exoppo.errors import ConfigurationError, FileFormatError, TrainingError

ACTIVATIONS = ("tanh", "relu")
OUTPUT_TRANSFORMS = ("identity", "softmax")
CHECKPOINT_MAGIC = "EXOPPO-CKPT-v1"


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int
    activation: str = "tanh"
    output_transform: str = "identity"

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.hidden:
            raise ConfigurationError("MlpSpec needs at least one hidden layer")
        dims = (self.input_dim, *self.hidden, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ConfigurationError(f"all layer dimensions must be >= 1, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.output_transform not in OUTPUT_TRANSFORMS:
            raise ConfigurationError(
                f"output_transform must be one of {OUTPUT_TRANSFORMS}, got {self.output_transform!r}"
            )

    def layer_shapes(self) -> tuple[tuple[int, int, int], ...]:
        """(rows, cols, bias_len) per affine layer; rows = fan-out."""
        dims = (self.input_dim, *self.hidden, self.output_dim)
        return tuple((dims[i + 1], dims[i], dims[i + 1]) for i in range(len(dims) - 1))

    @property
    def n_params(self) -> int:
        return sum(r * c + b for r, c, b in self.layer_shapes())

    def to_dict(self) -> dict[str, Any]:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "output_dim": self.output_dim,
            "activation": self.activation,
            "output_transform": self.output_transform,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "MlpSpec":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden=tuple(d["hidden"]),
            output_dim=int(d["output_dim"]),
            activation=d.get("activation", "tanh"),
            output_transform=d.get("output_transform", "identity"),
        )


@dataclass
class ParamVector:
    """Flat parameter storage plus per-layer shape metadata."""

    values: np.ndarray
    shapes: tuple[tuple[int, int, int], ...]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = sum(r * c + b for r, c, b in self.shapes)
        if self.values.shape != (expected,):
            raise ConfigurationError(
                f"parameter vector has shape {self.values.shape}, layout needs ({expected},)"
            )

    @classmethod
    def zeros(cls, spec: MlpSpec) -> "ParamVector":
        return cls(np.zeros(spec.n_params), spec.layer_shapes())

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(W, b) views into ``values``; writing to them mutates the vector."""
        out = []
        offset = 0
        for rows, cols, blen in self.shapes:
            w = self.values[offset : offset + rows * cols].reshape(rows, cols)
            offset += rows * cols
            b = self.values[offset : offset + blen]
            offset += blen
            out.append((w, b))
        return out

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.shapes)

    def __len__(self) -> int:
        return self.values.shape[0]


def _orthogonal(rows: int, cols: int, gain: float, rng: np.random.Generator) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_params(spec: MlpSpec, rng: np.random.Generator, output_gain: float = 1.0) -> ParamVector:
    """Orthogonal init, gain sqrt(2) on hidden layers and ``output_gain`` on the last; zero biases."""
    params = ParamVector.zeros(spec)
    layers = params.layers()
    for i, (w, _) in enumerate(layers):
        gain = output_gain if i == len(layers) - 1 else math.sqrt(2.0)
        w[...] = _orthogonal(w.shape[0], w.shape[1], gain, rng)
    return params


def _check_input(spec: MlpSpec, params: ParamVector, x: np.ndarray) -> np.ndarray:
    if params.shapes != spec.layer_shapes():
        raise ConfigurationError("parameter layout does not match MlpSpec")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != spec.input_dim:
        raise ConfigurationError(f"input has shape {x.shape}, expected last dim {spec.input_dim}")
    return x


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _act(spec: MlpSpec, z: np.ndarray) -> np.ndarray:
    return np.tanh(z) if spec.activation == "tanh" else np.maximum(z, 0.0)


@dataclass
class ForwardCache:
    """Activations kept for the backward pass. ``activations[0]`` is the input."""

    activations: list[np.ndarray]
    logits: np.ndarray
    output: np.ndarray
    squeeze: bool = False


def forward_cached(spec: MlpSpec, params: ParamVector, x: np.ndarray) -> ForwardCache:
    x = _check_input(spec, params, x)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    acts = [h]
    layers = params.layers()
    for w, b in layers[:-1]:
        h = _act(spec, h @ w.T + b)
        acts.append(h)
    w, b = layers[-1]
    logits = h @ w.T + b
    out = softmax(logits) if spec.output_transform == "softmax" else logits
    return ForwardCache(acts, logits, out, squeeze)


def forward(spec: MlpSpec, params: ParamVector, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on one input vector or a (batch, input_dim) array."""
    cache = forward_cached(spec, params, x)
    return cache.output[0] if cache.squeeze else cache.output


def backward_from_cache(
    spec: MlpSpec,
    params: ParamVector,
    cache: ForwardCache,
    output_grad: np.ndarray,
    *,
    wrt_logits: bool = False,
) -> ParamVector:
    """Gradient of ``sum(output * output_grad)`` over the batch.

    With ``wrt_logits=True`` the incoming gradient is taken with respect to the
    pre-softmax values, skipping the softmax Jacobian.
    """
    g = np.asarray(output_grad, dtype=np.float64)
    if cache.squeeze:
        g = g[None, :] if g.ndim == 1 else g
    if g.shape != cache.logits.shape:
        raise ConfigurationError(f"output_grad has shape {g.shape}, expected {cache.logits.shape}")
    if spec.output_transform == "softmax" and not wrt_logits:
        p = cache.output
        g = p * (g - (p * g).sum(axis=-1, keepdims=True))

    grad = ParamVector.zeros(spec)
    glayers = grad.layers()
    layers = params.layers()
    for i in range(len(layers) - 1, -1, -1):
        h_prev = cache.activations[i]
        gw, gb = glayers[i]
        gw[...] = g.T @ h_prev
        gb[...] = g.sum(axis=0)
        if i == 0:
            break
        g = g @ layers[i][0]
        if spec.activation == "tanh":
            g = g * (1.0 - h_prev * h_prev)
        else:
            g = g * (h_prev > 0.0)
    return grad


def backward(
    spec: MlpSpec,
    params: ParamVector,
    x: np.ndarray,
    output_grad: np.ndarray,
    *,
    wrt_logits: bool = False,
) -> ParamVector:
    """Recompute the forward pass and return d(output . output_grad)/d(params)."""
    cache = forward_cached(spec, params, x)
    return backward_from_cache(spec, params, cache, output_grad, wrt_logits=wrt_logits)


@dataclass
class OptimState:
    """Adam moments plus a step-decay learning-rate schedule."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    base_lr: float = 2.5e-4
    decay_factor: float = 1.0
    decay_interval: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(
        cls,
        n_params: int,
        base_lr: float,
        decay_factor: float = 1.0,
        decay_interval: int = 1,
    ) -> "OptimState":
        if base_lr <= 0:
            raise ConfigurationError(f"base_lr must be positive, got {base_lr}")
        if not 0.0 < decay_factor <= 1.0:
            raise ConfigurationError(f"decay_factor must lie in (0, 1], got {decay_factor}")
        if decay_interval < 1:
            raise ConfigurationError(f"decay_interval must be >= 1, got {decay_interval}")
        return cls(
            m=np.zeros(n_params),
            v=np.zeros(n_params),
            base_lr=float(base_lr),
            decay_factor=float(decay_factor),
            decay_interval=int(decay_interval),
        )

    @property
    def effective_lr(self) -> float:
        return self.base_lr * self.decay_factor ** (self.step // self.decay_interval)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["m"] = self.m.tolist()
        d["v"] = self.v.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "OptimState":
        d = dict(d)
        d["m"] = np.asarray(d["m"], dtype=np.float64)
        d["v"] = np.asarray(d["v"], dtype=np.float64)
        return cls(**d)


def optimizer_step(
    state: OptimState,
    params: np.ndarray,
    grad: np.ndarray,
    *,
    ascent: bool = True,
) -> tuple[np.ndarray, OptimState]:
    """One bias-corrected Adam step; returns new (params, state).

    ``grad`` is the gradient of the objective. With ``ascent=True`` the
    parameters move up the gradient (maximisation); pass ``ascent=False``
    for a loss.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        finite = np.abs(grad[np.isfinite(grad)])
        raise TrainingError(
            "non-finite gradient",
            step=state.step,
            max_abs_grad=float(np.max(np.abs(grad))) if grad.size else 0.0,
            max_finite_abs_grad=float(finite.max()) if finite.size else 0.0,
        )
    lr = state.effective_lr
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    update = lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_params = params + update if ascent else params - update
    return new_params, dataclasses.replace(state, m=m, v=v, step=t)


# -- checkpoint persistence -------------------------------------------------


def _encode(obj: Any) -> Any:
    if isinstance(obj, MlpSpec):
        return {"__type__": "MlpSpec", **obj.to_dict()}
    if isinstance(obj, ParamVector):
        return {"__type__": "ParamVector", "values": obj.values.tolist(), "shapes": [list(s) for s in obj.shapes]}
    if isinstance(obj, OptimState):
        return {"__type__": "OptimState", **obj.to_dict()}
    if isinstance(obj, np.ndarray):
        return {"__type__": "ndarray", "values": obj.tolist(), "dtype": str(obj.dtype)}
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _decode(obj: Any) -> Any:
    if isinstance(obj, dict):
        kind = obj.get("__type__")
        body = {k: v for k, v in obj.items() if k != "__type__"}
        if kind == "MlpSpec":
            return MlpSpec.from_dict(body)
        if kind == "ParamVector":
            return ParamVector(np.asarray(body["values"], dtype=np.float64), tuple(tuple(s) for s in body["shapes"]))
        if kind == "OptimState":
            return OptimState.from_dict(body)
        if kind == "ndarray":
            return np.asarray(body["values"], dtype=body["dtype"])
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path: str | os.PathLike, payload: dict[str, Any]) -> None:
    """Write ``payload`` as a versioned text checkpoint (magic line + JSON).

    Values may nest MlpSpec, ParamVector, OptimState and numpy arrays. Floats
    are written with repr precision so reloads are bit-exact.
    """
    body = json.dumps(_encode(payload), sort_keys=True)
    atomic_write_bytes(path, f"{CHECKPOINT_MAGIC}\n{body}\n".encode())


def load_checkpoint(path: str | os.PathLike) -> dict[str, Any]:
    text = Path(path).read_text()
    magic, _, body = text.partition("\n")
    if magic != CHECKPOINT_MAGIC:
        raise FileFormatError(f"{path}: not an exoppo checkpoint (magic {magic[:32]!r})")
    try:
        return _decode(json.loads(body))
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: corrupt checkpoint body: {exc}") from exc


def flat_concat(parts: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(p, dtype=np.float64).ravel() for p in parts])
