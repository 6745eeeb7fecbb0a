"""Small dense encoder/decoder networks with hand-written backprop and Adam.

Layers compute ``h @ W + b`` with ``W`` of shape ``(fan_in, fan_out)``;
hidden layers apply a smooth activation, the last layer is linear.

Checkpoint layout (all integers ``uint32`` little-endian)::

    magic   8 bytes   b"LOWBNET\\0"
    version uint32    1
    n       uint32    number of widths
    widths  n*uint32
    k       uint32    length of the activation tag
    tag     k bytes   ASCII
    then for each layer: W (fan_in*fan_out float64 LE, row-major), b (fan_out float64 LE)

A sidecar ``<checkpoint>.meta`` holds ``key=value`` lines (seed, config_hash, epoch).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import DimensionMismatchError, TrainingDivergenceError

ACTIVATIONS = ("softplus", "tanh")
MAGIC = b"LOWBNET\x00"
VERSION = 1


def _softplus(z):
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _act(tag, z):
    if tag == "softplus":
        return _softplus(z)
    return np.tanh(z)


def _act_grad(tag, z, h):
    if tag == "softplus":
        return expit(z)
    return 1.0 - h * h


@dataclass
class EncoderNet:
    widths: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "softplus"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if len(self.widths) < 2 or len(self.weights) != len(self.widths) - 1:
            raise DimensionMismatchError("widths and weights disagree")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.widths[i], self.widths[i + 1]) or b.shape != (self.widths[i + 1],):
                raise DimensionMismatchError(f"layer {i} has shape {W.shape}/{b.shape}")

    @property
    def d_in(self) -> int:
        return self.widths[0]

    @property
    def d_out(self) -> int:
        return self.widths[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "EncoderNet":
        return EncoderNet(list(self.widths), [W.copy() for W in self.weights],
                          [b.copy() for b in self.biases], self.activation)

    def __call__(self, x):
        return forward(self, x)[0]


def init_kaiming(widths, activation: str = "softplus", rng: np.random.Generator | None = None) -> EncoderNet:
    """Gaussian weights with std ``sqrt(2) / sqrt(fan_in * (1 + 0.01**2))``, zero biases."""
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise ValueError("need at least input and output width")
    rng = rng if rng is not None else np.random.default_rng()
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        std = math.sqrt(2.0) / math.sqrt(fan_in * (1.0 + 0.01 ** 2))
        weights.append(rng.standard_normal((fan_in, fan_out)) * std)
        biases.append(np.zeros(fan_out))
    return EncoderNet(widths, weights, biases, activation)


def forward(net: EncoderNet, x):
    """Return the output and a cache for :func:`backward`.  Accepts ``(d_in,)`` or ``(N, d_in)``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x[None] if single else x
    if h.shape[-1] != net.d_in:
        raise DimensionMismatchError(f"expected input width {net.d_in}, got {h.shape[-1]}")
    cache = [h]
    last = len(net.weights) - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ W + b
        if i < last:
            h = _act(net.activation, z)
            cache.append((z, h))
        else:
            h = z
    return (h[0] if single else h), cache


def backward(net: EncoderNet, cache, grad_out):
    """Reverse pass; returns ``(param_grads, grad_input)`` with grads ordered as ``net.params()``."""
    g = np.asarray(grad_out, dtype=float)
    if g.ndim == 1:
        g = g[None]
    grads = [None] * (2 * len(net.weights))
    for i in range(len(net.weights) - 1, -1, -1):
        h_in = cache[0] if i == 0 else cache[i][1]
        grads[2 * i] = h_in.T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ net.weights[i].T
        if i > 0:
            z, h = cache[i]
            g = g * _act_grad(net.activation, z, h)
    return grads, g


def gradient_check(net: EncoderNet, x, weights_out=None, h: float = 1e-5, floor: float = 1e-8) -> float:
    """Max relative gap between backprop and central differences of ``sum(weights_out * net(x))``.

    Relative error per parameter is ``|a - b| / max(|a|, |b|, floor)``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out, cache = forward(net, x)
    r = np.ones_like(out) if weights_out is None else np.asarray(weights_out, dtype=float)
    grads, _ = backward(net, cache, r)
    worst = 0.0
    for p, g in zip(net.params(), grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + h
            up = float(np.sum(r * net(x)))
            flat[j] = keep - h
            dn = float(np.sum(r * net(x)))
            flat[j] = keep
            fd = (up - dn) / (2.0 * h)
            gap = abs(fd - gflat[j]) / max(abs(fd), abs(gflat[j]), floor)
            worst = max(worst, gap)
    return worst


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_net(cls, net: EncoderNet, **hyper) -> "AdamState":
        st = cls(**hyper)
        st.m = [np.zeros_like(p) for p in net.params()]
        st.v = [np.zeros_like(p) for p in net.params()]
        return st


def adam_step(state: AdamState, net: EncoderNet, grads) -> tuple[EncoderNet, AdamState]:
    """In-place Adam update with the L2 penalty folded into the gradient."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in net.params()]
        state.v = [np.zeros_like(p) for p in net.params()]
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError("nonfinite gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(net.params(), grads, state.m, state.v):
        if state.weight_decay:
            g = g + state.weight_decay * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return net, state


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_net(path, net: EncoderNet, meta: dict | None = None) -> None:
    path = Path(path)
    tag = net.activation.encode("ascii")
    parts = [MAGIC, struct.pack("<II", VERSION, len(net.widths)),
             struct.pack(f"<{len(net.widths)}I", *net.widths), struct.pack("<I", len(tag)), tag]
    for W, b in zip(net.weights, net.biases):
        parts.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    path.write_bytes(b"".join(parts))
    if meta is not None:
        lines = [f"{k}={meta[k]}" for k in sorted(meta)]
        Path(str(path) + ".meta").write_text("\n".join(lines) + "\n")


def load_net(path) -> EncoderNet:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise ValueError(f"{path}: not a network checkpoint")
    off = 8
    version, n = struct.unpack_from("<II", buf, off)
    off += 8
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    widths = list(struct.unpack_from(f"<{n}I", buf, off))
    off += 4 * n
    (k,) = struct.unpack_from("<I", buf, off)
    off += 4
    tag = buf[off:off + k].decode("ascii")
    off += k
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        W = np.frombuffer(buf, dtype="<f8", count=fan_in * fan_out, offset=off).reshape(fan_in, fan_out)
        off += 8 * fan_in * fan_out
        b = np.frombuffer(buf, dtype="<f8", count=fan_out, offset=off)
        off += 8 * fan_out
        weights.append(W.astype(float))
        biases.append(b.astype(float))
    if off != len(buf):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return EncoderNet(widths, weights, biases, tag)


def read_meta(path) -> dict:
    meta = {}
    p = Path(str(path) + ".meta")
    if p.exists():
        for line in p.read_text().splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                meta[k.strip()] = v.strip()
    return meta
