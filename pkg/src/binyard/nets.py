"""Minimal differentiable function approximator for the controller.

Tanh multilayer perceptrons with parameters stored as one flat float64
array, exact reverse-mode gradients, a categorical distribution over
logits with optional action masking, and a first-order optimizer. No
hardware acceleration; everything is plain numpy for reproducibility.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_MAGIC = b"BINYARD\x00"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MLPSpec:
    """Architecture of one tanh MLP with a linear output layer."""

    input_dim: int
    hidden_layers: tuple[int, ...]
    output_dim: int

    def __post_init__(self) -> None:
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden_layers):
            raise ValueError("all layer dims must be >= 1")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per affine layer."""
        dims = [self.input_dim, *self.hidden_layers, self.output_dim]
        return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]

    @property
    def n_params(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_dims)


@dataclass
class ParamSet:
    """Flat parameter array plus a parallel gradient array of equal length."""

    spec: MLPSpec
    values: np.ndarray
    grads: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.spec.n_params,):
            raise ValueError(
                f"expected {self.spec.n_params} parameters, got {self.values.shape}"
            )
        if self.grads is None:
            self.grads = np.zeros_like(self.values)

    def layers(self, array: np.ndarray | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
        """(W, b) views into the flat array, W shaped (fan_out, fan_in).

        Views into ``values`` are cached; parameter updates must mutate the
        flat array in place (as :class:`Optimizer` does) to keep them valid.
        """
        if array is None:
            cached = getattr(self, "_value_views", None)
            if cached is not None:
                return cached
            views = self._slice_views(self.values)
            object.__setattr__(self, "_value_views", views)
            return views
        return self._slice_views(array)

    def _slice_views(self, array: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        out, offset = [], 0
        for fan_in, fan_out in self.spec.layer_dims:
            w = array[offset : offset + fan_in * fan_out].reshape(fan_out, fan_in)
            offset += fan_in * fan_out
            b = array[offset : offset + fan_out]
            offset += fan_out
            out.append((w, b))
        return out

    def copy(self) -> "ParamSet":
        return ParamSet(self.spec, self.values.copy(), self.grads.copy())


def init_params(spec: MLPSpec, rng: np.random.Generator, last_layer_scale: float = 1.0) -> ParamSet:
    """Gaussian fan-in initialization; biases zero.

    ``last_layer_scale`` shrinks the output layer (useful for near-uniform
    initial policies).
    """
    values = np.empty(spec.n_params)
    offset = 0
    n_layers = len(spec.layer_dims)
    for k, (fan_in, fan_out) in enumerate(spec.layer_dims):
        scale = 1.0 / np.sqrt(fan_in)
        if k == n_layers - 1:
            scale *= last_layer_scale
        values[offset : offset + fan_in * fan_out] = (
            rng.standard_normal(fan_in * fan_out) * scale
        )
        offset += fan_in * fan_out
        values[offset : offset + fan_out] = 0.0
        offset += fan_out
    return ParamSet(spec, values)


def forward(spec: MLPSpec, params: ParamSet, x: np.ndarray) -> np.ndarray:
    """Evaluate the network. ``x`` is (input_dim,) or (batch, input_dim)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        if x.shape[0] != spec.input_dim:
            raise ValueError(f"input has width {x.shape[0]}, expected {spec.input_dim}")
        layers = params.layers()
        h = x
        last = len(layers) - 1
        for k, (w, b) in enumerate(layers):
            h = w @ h + b
            if k < last:
                h = np.tanh(h)
        return h
    y, _ = forward_cached(spec, params, x)
    return y


def forward_cached(
    spec: MLPSpec, params: ParamSet, x: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass keeping the post-activation of every layer for backward."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x.reshape(1, -1) if squeeze else x
    if h.shape[1] != spec.input_dim:
        raise ValueError(f"input has width {h.shape[1]}, expected {spec.input_dim}")
    cache = [h]
    layers = params.layers()
    for k, (w, b) in enumerate(layers):
        h = h @ w.T + b
        if k < len(layers) - 1:
            h = np.tanh(h)
        cache.append(h)
    return (h[0] if squeeze else h), cache


def backward(
    spec: MLPSpec,
    params: ParamSet,
    cache: list[np.ndarray],
    grad_out: np.ndarray,
) -> np.ndarray:
    """Gradients of sum_b <grad_out_b, y_b> w.r.t. the flat parameters.

    ``cache`` must come from :func:`forward_cached` on the same params.
    The result is also stored in ``params.grads``.
    """
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.ndim == 1:
        grad_out = grad_out.reshape(1, -1)
    layers = params.layers()
    grads = np.zeros_like(params.values)
    grad_views = params.layers(grads)
    delta = grad_out
    for k in range(len(layers) - 1, -1, -1):
        w, _ = layers[k]
        gw, gb = grad_views[k]
        if k < len(layers) - 1:
            # cache[k + 1] holds tanh(z); d tanh = 1 - tanh^2
            delta = delta * (1.0 - cache[k + 1] ** 2)
        gw += delta.T @ cache[k]
        gb += delta.sum(axis=0)
        if k > 0:
            delta = delta @ w
    params.grads[:] = grads
    return grads


def finite_difference_grads(
    spec: MLPSpec,
    params: ParamSet,
    x: np.ndarray,
    grad_out: np.ndarray,
    step: float = 1e-5,
) -> np.ndarray:
    """Central-difference gradients of the same scalar as :func:`backward`."""
    grad_out = np.asarray(grad_out, dtype=np.float64)

    def scalar(values: np.ndarray) -> float:
        y = forward(spec, ParamSet(spec, values), x)
        return float((y * grad_out).sum())

    grads = np.zeros_like(params.values)
    for i in range(params.values.size):
        bumped = params.values.copy()
        bumped[i] += step
        up = scalar(bumped)
        bumped[i] -= 2 * step
        down = scalar(bumped)
        grads[i] = (up - down) / (2 * step)
    return grads


# Categorical distribution over logits. Masked entries get probability
# exactly zero via -inf logits; all computations subtract the max logit
# first for stability.


def masked_logits(logits: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is None:
        return np.asarray(logits, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("all actions masked")
    out = np.asarray(logits, dtype=np.float64).copy()
    out[~mask] = -np.inf
    return out


def log_softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shift = logits - logits.max(axis=-1, keepdims=True)
    with np.errstate(divide="ignore"):  # exp(-inf) = 0 is intended for masks
        return shift - np.log(np.exp(shift).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shift = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return shift / shift.sum(axis=-1, keepdims=True)


def sample_categorical(
    logits: np.ndarray, rng: np.random.Generator, mask: np.ndarray | None = None
) -> int:
    probs = softmax(masked_logits(logits, mask))
    cdf = np.cumsum(probs)
    return min(int(np.searchsorted(cdf, rng.random(), side="right")), len(probs) - 1)


def sample_with_log_prob(logits: np.ndarray, rng: np.random.Generator) -> tuple[int, float]:
    """Draw one action and return it with its log probability (no masking)."""
    shift = logits - logits.max()
    ex = np.exp(shift)
    z = ex.sum()
    cdf = np.cumsum(ex)
    action = min(int(np.searchsorted(cdf, rng.random() * z, side="right")), len(ex) - 1)
    return action, float(shift[action] - np.log(z))


def log_prob(logits: np.ndarray, action: int | np.ndarray) -> np.ndarray | float:
    logp = log_softmax(logits)
    if logp.ndim == 1:
        return float(logp[action])
    return logp[np.arange(logp.shape[0]), action]


def entropy(logits: np.ndarray) -> np.ndarray | float:
    logp = log_softmax(logits)
    p = np.exp(logp)
    terms = np.zeros_like(p)
    nz = p > 0.0
    terms[nz] = p[nz] * logp[nz]
    h = -terms.sum(axis=-1)
    return float(h) if np.ndim(h) == 0 else h


def kl_divergence(logits_p: np.ndarray, logits_q: np.ndarray) -> np.ndarray | float:
    """KL(p || q) summed over the support of p."""
    logp = log_softmax(logits_p)
    logq = log_softmax(logits_q)
    p = np.exp(logp)
    terms = np.zeros_like(p)
    nz = p > 0.0
    terms[nz] = p[nz] * (logp[nz] - logq[nz])
    kl = terms.sum(axis=-1)
    return float(kl) if np.ndim(kl) == 0 else kl


class Optimizer:
    """Adam (default) or plain gradient descent on a flat parameter array."""

    def __init__(
        self,
        n_params: int,
        lr: float,
        method: str = "adam",
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if method not in ("adam", "sgd"):
            raise ValueError(f"unknown method {method!r}")
        self.lr = lr
        self.method = method
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def update(self, params: ParamSet, grads: np.ndarray | None = None) -> None:
        g = params.grads if grads is None else np.asarray(grads, dtype=np.float64)
        if not np.isfinite(g).all():
            bad = int(np.flatnonzero(~np.isfinite(g))[0])
            raise FloatingPointError(f"non-finite gradient at parameter index {bad}")
        if self.method == "sgd":
            params.values -= self.lr * g
            return
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        params.values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class PolicyCheckpoint:
    """Policy and value parameters plus training provenance."""

    policy_spec: MLPSpec
    value_spec: MLPSpec
    policy_params: np.ndarray
    value_params: np.ndarray
    phase: str = ""
    seed: int = 0
    timesteps_trained: int = 0

    def policy(self) -> ParamSet:
        return ParamSet(self.policy_spec, self.policy_params.copy())

    def value(self) -> ParamSet:
        return ParamSet(self.value_spec, self.value_params.copy())


def _spec_to_dict(spec: MLPSpec) -> dict:
    return {
        "input_dim": spec.input_dim,
        "hidden_layers": list(spec.hidden_layers),
        "output_dim": spec.output_dim,
    }


def _spec_from_dict(data: dict) -> MLPSpec:
    return MLPSpec(
        input_dim=int(data["input_dim"]),
        hidden_layers=tuple(int(h) for h in data["hidden_layers"]),
        output_dim=int(data["output_dim"]),
    )


def checkpoint_header(ckpt: PolicyCheckpoint) -> dict:
    return {
        "policy_spec": _spec_to_dict(ckpt.policy_spec),
        "value_spec": _spec_to_dict(ckpt.value_spec),
        "policy_len": int(ckpt.policy_params.size),
        "value_len": int(ckpt.value_params.size),
        "phase": ckpt.phase,
        "seed": int(ckpt.seed),
        "timesteps_trained": int(ckpt.timesteps_trained),
    }


def save_checkpoint(ckpt: PolicyCheckpoint, path: str) -> None:
    """Binary layout: magic, version, header length, header JSON, then the
    policy and value parameter arrays as little-endian float64. A JSON
    sidecar with the same header is written next to the file."""
    header = json.dumps(checkpoint_header(ckpt), sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        f.write(header)
        f.write(np.ascontiguousarray(ckpt.policy_params, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(ckpt.value_params, dtype="<f8").tobytes())
    with open(path + ".json", "w", encoding="utf-8") as f:
        json.dump(checkpoint_header(ckpt), f, indent=2, sort_keys=True)
        f.write("\n")


def load_checkpoint(path: str) -> PolicyCheckpoint:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, header_len = struct.unpack("<II", f.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(f.read(header_len).decode("utf-8"))
        policy_spec = _spec_from_dict(header["policy_spec"])
        value_spec = _spec_from_dict(header["value_spec"])
        n_pol, n_val = int(header["policy_len"]), int(header["value_len"])
        policy = np.frombuffer(f.read(8 * n_pol), dtype="<f8").astype(np.float64)
        value = np.frombuffer(f.read(8 * n_val), dtype="<f8").astype(np.float64)
    if policy.size != n_pol or value.size != n_val:
        raise ValueError(f"{path}: truncated parameter payload")
    return PolicyCheckpoint(
        policy_spec=policy_spec,
        value_spec=value_spec,
        policy_params=policy,
        value_params=value,
        phase=str(header.get("phase", "")),
        seed=int(header.get("seed", 0)),
        timesteps_trained=int(header.get("timesteps_trained", 0)),
    )
