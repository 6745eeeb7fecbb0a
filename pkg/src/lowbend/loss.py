"""Distortion/bending sampling loss, reconstruction loss and Monte Carlo estimates.

For a triple ``(x, y, m, d)`` with ``m`` the geodesic midpoint and an encoder
``phi``::

    dq1 = (phi(y) - phi(x)) / d
    dq2 = 8 * ((phi(x) + phi(y)) / 2 - phi(m)) / d**2
    loss = mean(gamma(|dq1|)) + lam * mean(|dq2|**2)

with ``gamma(s) = s**2 + (1 + c**2)**2 / (s**2 + c**2) - 2 - c**2``.  The
penalty is evaluated in the algebraically equal form
``(s**2 - 1)**2 / (s**2 + c**2)``, which is exactly zero at ``s = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DimensionMismatchError, DivisionGuardError, EmptySampleError
from .geometry import get_kind
from .sampling import SamplingStrategy, Triples, sample_pairs


@dataclass(frozen=True)
class LossWeights:
    lam: float = 1.0
    c: float = 1.0
    kappa_rec: float = 0.0

    def __post_init__(self):
        if self.lam < 0 or self.kappa_rec < 0:
            raise ValueError("lam and kappa_rec must be nonnegative")
        if self.c <= 0:
            raise ValueError("c must be positive")


@dataclass
class LossBreakdown:
    isometry: float
    bending: float
    reconstruction: float
    total: float
    n_samples: int
    stderr: float = 0.0
    component_stderr: dict = field(default_factory=dict)

    @classmethod
    def combine(cls, isometry, bending, reconstruction, weights: LossWeights, n, stderr=0.0,
                component_stderr=None):
        total = isometry + weights.lam * bending + weights.kappa_rec * reconstruction
        return cls(float(isometry), float(bending), float(reconstruction), float(total), int(n),
                   float(stderr), dict(component_stderr or {}))

    def as_row(self) -> dict:
        return {
            "isometry": self.isometry,
            "bending": self.bending,
            "reconstruction": self.reconstruction,
            "total": self.total,
        }


def gamma(s, c: float = 1.0):
    """Distortion penalty; ``gamma(1) = 0``, ``gamma(0) = 1/c**2``."""
    s2 = np.square(s)
    return np.square(s2 - 1.0) / (s2 + c * c)


def gamma_dt(t, c: float = 1.0):
    """Derivative of the penalty with respect to ``t = s**2``."""
    return (t - 1.0) * (t + 2.0 * c * c + 1.0) / np.square(t + c * c)


def _check_dist(dist) -> np.ndarray:
    dist = np.asarray(dist, dtype=float)
    if np.any(dist <= 0.0):
        raise DivisionGuardError("difference quotient needs a positive distance")
    return dist


def first_quotient(phi_x, phi_y, dist) -> np.ndarray:
    dist = _check_dist(dist)
    return (np.asarray(phi_y) - np.asarray(phi_x)) / dist[..., None]


def second_quotient(phi_x, phi_y, phi_mid, dist) -> np.ndarray:
    dist = _check_dist(dist)
    avg = 0.5 * (np.asarray(phi_x) + np.asarray(phi_y))
    return 8.0 * (avg - np.asarray(phi_mid)) / np.square(dist)[..., None]


def _encode(triples: Triples, phi):
    return phi(triples.inputs("x")), phi(triples.inputs("y")), phi(triples.inputs("mid"))


def diff_quotient_1(triples: Triples, phi) -> np.ndarray:
    a, b, _ = _encode(triples, phi)
    return first_quotient(a, b, triples.dist)


def diff_quotient_2(triples: Triples, phi) -> np.ndarray:
    a, b, m = _encode(triples, phi)
    return second_quotient(a, b, m, triples.dist)


def pointwise_terms(phi_x, phi_y, phi_mid, dist, c: float = 1.0):
    """Per-sample isometry and bending integrands."""
    q1 = first_quotient(phi_x, phi_y, dist)
    q2 = second_quotient(phi_x, phi_y, phi_mid, dist)
    iso = gamma(np.sqrt(np.sum(q1 * q1, axis=-1)), c)
    bend = np.sum(q2 * q2, axis=-1)
    return iso, bend


def _stderr(a: np.ndarray) -> float:
    if len(a) < 2:
        return 0.0
    return float(np.std(a, ddof=1) / np.sqrt(len(a)))


def loss_from_codes(phi_x, phi_y, phi_mid, dist, weights: LossWeights) -> LossBreakdown:
    iso, bend = pointwise_terms(phi_x, phi_y, phi_mid, dist, weights.c)
    if len(iso) == 0:
        raise EmptySampleError("loss of an empty sample set")
    total = iso + weights.lam * bend
    return LossBreakdown.combine(
        np.mean(iso), np.mean(bend), 0.0, weights, len(iso), _stderr(total),
        {"isometry": _stderr(iso), "bending": _stderr(bend)},
    )


def discrete_loss(triples: Triples, phi, weights: LossWeights) -> LossBreakdown:
    """Sampling loss ``E^S`` of ``phi`` over a triple set (reconstruction term zero)."""
    if len(triples) == 0:
        raise EmptySampleError("loss of an empty sample set")
    return loss_from_codes(*_encode(triples, phi), triples.dist, weights)


def loss_and_cotangents(phi_x, phi_y, phi_mid, dist, weights: LossWeights):
    """Batch loss and its gradients with respect to the three code arrays."""
    n = len(dist)
    if n == 0:
        raise EmptySampleError("loss of an empty sample set")
    d = _check_dist(dist)[:, None]
    q1 = (phi_y - phi_x) / d
    q2 = 8.0 * (0.5 * (phi_x + phi_y) - phi_mid) / (d * d)
    t = np.sum(q1 * q1, axis=1)
    iso = np.square(t - 1.0) / (t + weights.c ** 2)
    bend = np.sum(q2 * q2, axis=1)
    g_q1 = (2.0 / n) * gamma_dt(t, weights.c)[:, None] * q1
    g_q2 = (2.0 * weights.lam / n) * q2
    g_y = g_q1 / d + g_q2 * (4.0 / (d * d))
    g_x = -g_q1 / d + g_q2 * (4.0 / (d * d))
    g_mid = -g_q2 * (8.0 / (d * d))
    br = LossBreakdown.combine(np.mean(iso), np.mean(bend), 0.0, weights, n)
    return br, (g_x, g_y, g_mid)


def rms_sq(a: np.ndarray) -> np.ndarray:
    """Squared discrete L2 norm per row: mean of squares over all trailing entries."""
    a = np.asarray(a, dtype=float)
    return np.mean(a.reshape(len(a), -1) ** 2, axis=1)


def reconstruction_loss(triples: Triples, phi, psi) -> float:
    """``R = 1/(2|S|) sum ||psi(phi(x)) - x||^2 + ||psi(phi(y)) - y||^2`` (per-pixel mean norm)."""
    if len(triples) == 0:
        raise EmptySampleError("reconstruction loss of an empty sample set")
    total = 0.0
    for key in ("x", "y"):
        inp = triples.inputs(key)
        out = psi(phi(inp))
        if out.shape != inp.shape:
            raise DimensionMismatchError(f"decoder output {out.shape} vs input {inp.shape}")
        total = total + np.sum(rms_sq(out - inp))
    return float(total / (2 * len(triples)))


def full_loss(triples: Triples, phi, psi, weights: LossWeights) -> LossBreakdown:
    base = discrete_loss(triples, phi, weights)
    rec = reconstruction_loss(triples, phi, psi) if psi is not None else 0.0
    return LossBreakdown.combine(base.isometry, base.bending, rec, weights, base.n_samples,
                                 base.stderr, base.component_stderr)


def _eval_at_exp(phi, kind, x, v):
    # Embeddings defined on the chart's covering space evaluate in normal
    # coordinates directly; plain callables see the reduced manifold point.
    at_exp = getattr(phi, "eval_exp", None)
    if at_exp is not None:
        return at_exp(x, v)
    return phi(kind.exp(x, v))


def mc_continuous_loss(kind, phi, strategy: SamplingStrategy, n: int, weights: LossWeights,
                       rng: np.random.Generator, chunk: int = 1 << 17) -> LossBreakdown:
    """Monte Carlo estimate of the continuous sampling loss with per-component stderr.

    ``phi`` acts on chart coordinates.  Pairs are generated as ``y = exp_x(v)``
    and midpoints as ``exp_x(v/2)``.
    """
    kind = get_kind(kind)
    if n < 2:
        raise ValueError("need at least two samples")
    iso_parts, bend_parts = [], []
    left = n
    while left > 0:
        k = min(chunk, left)
        s = sample_pairs(kind, strategy, k, rng)
        a = _eval_at_exp(phi, kind, s.x, np.zeros_like(s.v))
        b = _eval_at_exp(phi, kind, s.x, s.v)
        m = _eval_at_exp(phi, kind, s.x, 0.5 * s.v)
        iso, bend = pointwise_terms(a, b, m, s.dist, weights.c)
        iso_parts.append(iso)
        bend_parts.append(bend)
        left -= k
    iso = np.concatenate(iso_parts)
    bend = np.concatenate(bend_parts)
    total = iso + weights.lam * bend
    return LossBreakdown.combine(
        np.mean(iso), np.mean(bend), 0.0, weights, n, _stderr(total),
        {"isometry": _stderr(iso), "bending": _stderr(bend)},
    )
