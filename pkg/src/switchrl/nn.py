"""Minimal feed-forward networks with analytic gradients.

Plain float64 numpy MLPs: forward pass, exact backpropagation,
bias-corrected Adam, and Polyak averaging for target networks. There is
no autodiff graph; every gradient is closed form per layer. All
operations are pure functions of their inputs, which keeps training
runs bit-reproducible given seeds.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

HIDDEN_ACTIVATIONS = ("relu", "tanh")
OUTPUT_ACTIVATIONS = ("identity", "tanh")

_MAGIC = b"MLPB"
_FORMAT_VERSION = 1


class ConfigurationError(ValueError):
    """Shape, dimension, or activation-tag mismatch."""


class NumericsError(RuntimeError):
    """An update or input would introduce non-finite values."""


@dataclass
class MlpParams:
    """Parameters of a fully-connected network.

    ``weights[k]`` has shape (out_k, in_k) and ``biases[k]`` shape
    (out_k,); consecutive layers chain (out_k == in_{k+1}).
    ``activations`` holds one tag per layer: hidden tags are 'relu' or
    'tanh', the final tag is 'identity' or 'tanh'.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: tuple[str, ...]

    def __post_init__(self) -> None:
        self.activations = tuple(self.activations)
        validate_params(self)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.in_dim,) + tuple(w.shape[0] for w in self.weights)

    def copy(self) -> "MlpParams":
        return MlpParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activations,
        )


@dataclass
class MlpGrads:
    """Per-layer gradients, shaped like the corresponding MlpParams."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]


def validate_params(params: MlpParams) -> None:
    n = len(params.weights)
    if n == 0:
        raise ConfigurationError("network needs at least one layer")
    if len(params.biases) != n or len(params.activations) != n:
        raise ConfigurationError("weights, biases and activations must align")
    for k in range(n):
        w, b = params.weights[k], params.biases[k]
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise ConfigurationError(f"layer {k}: weight {w.shape} / bias {b.shape} mismatch")
        if k + 1 < n and params.weights[k + 1].shape[1] != w.shape[0]:
            raise ConfigurationError(
                f"layer {k} out dim {w.shape[0]} != layer {k + 1} in dim "
                f"{params.weights[k + 1].shape[1]}"
            )
        tag = params.activations[k]
        allowed = OUTPUT_ACTIVATIONS if k == n - 1 else HIDDEN_ACTIVATIONS
        if tag not in allowed:
            raise ConfigurationError(f"layer {k}: activation {tag!r} not in {allowed}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise NumericsError(f"layer {k}: non-finite parameter entries")


def mlp_init(
    layer_sizes,
    rng: np.random.Generator,
    hidden_activation: str = "relu",
    output_activation: str = "identity",
) -> MlpParams:
    """Uniform fan-in initialization: U(-1/sqrt(in), 1/sqrt(in)) per layer."""
    sizes = list(layer_sizes)
    if len(sizes) < 2:
        raise ConfigurationError("layer_sizes needs at least input and output dims")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    acts = (hidden_activation,) * (len(weights) - 1) + (output_activation,)
    return MlpParams(weights, biases, acts)


def _activate(tag: str, z: np.ndarray) -> np.ndarray:
    if tag == "relu":
        return np.maximum(z, 0.0)
    if tag == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(tag: str, z: np.ndarray, activated: np.ndarray) -> np.ndarray:
    if tag == "relu":
        return (z > 0.0).astype(np.float64)
    if tag == "tanh":
        return 1.0 - activated * activated
    return np.ones_like(z)


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on a single input (in,) or a batch (B, in)."""
    h = np.asarray(x, dtype=np.float64)
    if h.shape[-1] != params.in_dim:
        raise ConfigurationError(f"input dim {h.shape[-1]} != expected {params.in_dim}")
    if not np.all(np.isfinite(h)):
        raise NumericsError("non-finite network input")
    for w, b, tag in zip(params.weights, params.biases, params.activations):
        h = _activate(tag, h @ w.T + b)
    return h


def mlp_backward(
    params: MlpParams, x: np.ndarray, upstream: np.ndarray
) -> tuple[MlpGrads, np.ndarray]:
    """Exact gradients of sum(upstream * output) w.r.t. parameters and input.

    ``x`` may be a single vector or a batch (B, in); ``upstream`` must
    have the matching shape on the output side. With a batch, parameter
    gradients are summed over the batch rows (callers divide as needed).
    """
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.shape[-1] != params.in_dim:
        raise ConfigurationError(f"input dim {x.shape[-1]} != expected {params.in_dim}")
    if upstream.shape[-1] != params.out_dim or upstream.ndim != x.ndim:
        raise ConfigurationError(
            f"upstream shape {upstream.shape} incompatible with output dim {params.out_dim}"
        )

    n = params.n_layers
    pre: list[np.ndarray] = []
    post: list[np.ndarray] = [x]
    h = x
    for w, b, tag in zip(params.weights, params.biases, params.activations):
        z = h @ w.T + b
        h = _activate(tag, z)
        pre.append(z)
        post.append(h)

    batched = x.ndim == 2
    d_weights: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    d_biases: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    g = upstream * _activation_grad(params.activations[-1], pre[-1], post[-1])
    input_grad = None
    for k in range(n - 1, -1, -1):
        a_prev = post[k]
        if batched:
            d_weights[k] = g.T @ a_prev
            d_biases[k] = g.sum(axis=0)
        else:
            d_weights[k] = np.outer(g, a_prev)
            d_biases[k] = g.copy()
        g_in = g @ params.weights[k]
        if k > 0:
            g = g_in * _activation_grad(params.activations[k - 1], pre[k - 1], post[k])
        else:
            input_grad = g_in
    return MlpGrads(d_weights, d_biases), input_grad


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    """First/second-moment accumulators, one pair per parameter array."""

    m_weights: list[np.ndarray]
    v_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    v_biases: list[np.ndarray]
    step: int = 0
    hyper: AdamHyper = field(default_factory=AdamHyper)


def adam_init(params: MlpParams, lr: float = 3e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(b) for b in params.biases],
        [np.zeros_like(b) for b in params.biases],
        step=0,
        hyper=AdamHyper(lr, beta1, beta2, eps),
    )


def _adam_update(theta, g, m, v, t, hyp):
    m_new = hyp.beta1 * m + (1.0 - hyp.beta1) * g
    v_new = hyp.beta2 * v + (1.0 - hyp.beta2) * (g * g)
    m_hat = m_new / (1.0 - hyp.beta1**t)
    v_hat = v_new / (1.0 - hyp.beta2**t)
    return theta - hyp.lr * m_hat / (np.sqrt(v_hat) + hyp.eps), m_new, v_new


def adam_step(
    state: AdamState, params: MlpParams, grads: MlpGrads
) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam step; returns the updated copies."""
    for g in grads.weights + grads.biases:
        if not np.all(np.isfinite(g)):
            raise NumericsError("non-finite gradient, update rejected")
    t = state.step + 1
    hyp = state.hyper
    new_w, new_b = [], []
    m_w, v_w, m_b, v_b = [], [], [], []
    for k in range(params.n_layers):
        w, mw, vw = _adam_update(
            params.weights[k], grads.weights[k], state.m_weights[k], state.v_weights[k], t, hyp
        )
        b, mb, vb = _adam_update(
            params.biases[k], grads.biases[k], state.m_biases[k], state.v_biases[k], t, hyp
        )
        new_w.append(w)
        new_b.append(b)
        m_w.append(mw)
        v_w.append(vw)
        m_b.append(mb)
        v_b.append(vb)
    new_params = MlpParams(new_w, new_b, params.activations)
    new_state = AdamState(m_w, v_w, m_b, v_b, step=t, hyper=hyp)
    return new_params, new_state


def soft_update(target: MlpParams, source: MlpParams, tau: float) -> MlpParams:
    """Polyak average: (1 - tau) * target + tau * source, elementwise."""
    if not 0.0 <= tau <= 1.0:
        raise ConfigurationError(f"tau must lie in [0, 1], got {tau}")
    if target.layer_sizes != source.layer_sizes:
        raise ConfigurationError(
            f"shape mismatch: {target.layer_sizes} vs {source.layer_sizes}"
        )
    new_w = [(1.0 - tau) * tw + tau * sw for tw, sw in zip(target.weights, source.weights)]
    new_b = [(1.0 - tau) * tb + tau * sb for tb, sb in zip(target.biases, source.biases)]
    return MlpParams(new_w, new_b, target.activations)


def save_params(path, params: MlpParams) -> None:
    """Write a flat binary checkpoint.

    Layout: magic 'MLPB', uint32 version, uint32 layer count, then per
    layer uint32 in_dim, uint32 out_dim, row-major float64 weights,
    float64 biases. All integers and reals little-endian. Activation
    tags are not part of the format; callers record them alongside.
    """
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _FORMAT_VERSION, params.n_layers))
        for w, b in zip(params.weights, params.biases):
            out_dim, in_dim = w.shape
            fh.write(struct.pack("<II", in_dim, out_dim))
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_params(path, activations) -> MlpParams:
    """Read a checkpoint written by save_params; activations supplied by caller."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ConfigurationError(f"{path}: bad magic {magic!r}")
        version, n_layers = struct.unpack("<II", fh.read(8))
        if version != _FORMAT_VERSION:
            raise ConfigurationError(f"{path}: unsupported version {version}")
        weights, biases = [], []
        for _ in range(n_layers):
            in_dim, out_dim = struct.unpack("<II", fh.read(8))
            w = np.frombuffer(fh.read(8 * in_dim * out_dim), dtype="<f8")
            weights.append(w.reshape(out_dim, in_dim).astype(np.float64))
            b = np.frombuffer(fh.read(8 * out_dim), dtype="<f8")
            biases.append(b.astype(np.float64))
    return MlpParams(weights, biases, tuple(activations))
