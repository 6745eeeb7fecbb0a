"""Pair and triple sampling under the three strategies S1, S2, S3.

* ``S1``: ``x`` uniform on M, ``y`` uniform (w.r.t. volume) in the
  eps-neighbourhood of ``x``.  Drawn as ``y = exp_x(v)`` with ``v`` uniform in
  the tangent eps-ball, accepted with probability ``sqrt(det G_x)`` at ``|v|``.
* ``S2``: ``x`` uniform on M, ``v`` uniform in the admissible tangent
  eps-ball, ``y = exp_x(v)``.
* ``S3``: ``(x, y)`` uniform on ``M x M``, rejected unless ``d(x, y) < eps``.

All strategies additionally reject pairs closer than ``min_dist``.

Triple file format (``write_triples``/``read_triples``): comma separated
text, one header line naming the fields, then one record per line::

    index,x_0..x_{d-1},y_0..,mid_0..,dist,payload

Floats are written with ``repr`` so a reload is bit-exact.  ``payload`` is
the record index into a separate binary payload file, or ``-1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import SamplingStarvationError
from .geometry import Manifold, get_kind

STRATEGIES = ("S1", "S2", "S3")
MAX_TRIES = 10**6
_CHUNK_CAP = 1 << 18


@dataclass(frozen=True)
class SamplingStrategy:
    tag: str
    eps: float
    min_dist: float = 0.0

    def __post_init__(self):
        tag = self.tag.upper()
        object.__setattr__(self, "tag", tag)
        if tag not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.tag!r}")
        if not (0.0 <= self.min_dist < self.eps):
            raise ValueError("need 0 <= min_dist < eps")

    def check(self, kind: Manifold) -> None:
        if self.eps > kind.injectivity_bound:
            raise ValueError(
                f"eps={self.eps} exceeds the injectivity bound {kind.injectivity_bound} of {kind.name}"
            )


def default_min_dist(kind) -> float:
    """Rejection floor used by the experiments: 0.01*pi on the hemisphere, diameter/20 otherwise."""
    kind = get_kind(kind)
    if kind.name == "hemisphere":
        return 0.01 * math.pi
    return kind.diameter / 20.0


@dataclass
class PairSample:
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray  # tangent vector at x with exp_x(v) = y
    dist: np.ndarray
    proposals: int

    @property
    def acceptance(self) -> float:
        return len(self.dist) / self.proposals if self.proposals else float("nan")


def _tangent_ball(kind: Manifold, x: np.ndarray, eps: float, rng: np.random.Generator) -> np.ndarray:
    m = kind.dim
    g = rng.standard_normal((len(x), m))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = eps * rng.random(len(x)) ** (1.0 / m)
    return kind.from_frame(x, g * r[:, None])


def _local_pairs(kind, strategy, n, rng, max_tries):
    """S1/S2: per-slot x, tangent proposals redrawn until accepted."""
    x = kind.sample_uniform(rng, n)
    v = np.zeros((n, kind.n_coords))
    done = np.zeros(n, dtype=bool)
    since_accept = np.zeros(n, dtype=np.int64)
    proposals = 0
    reps = 1
    while not done.all():
        pending = np.flatnonzero(~done)
        reps = min(reps, max(1, _CHUNK_CAP // len(pending)))
        slots = np.repeat(pending, reps)
        cand = _tangent_ball(kind, x[slots], strategy.eps, rng)
        r = np.linalg.norm(cand, axis=1)
        ok = kind.admissible(x[slots], cand) & (r >= strategy.min_dist)
        if strategy.tag == "S1":
            ok &= rng.random(len(slots)) < kind.volume_density(r)
        proposals += len(slots)
        ok = ok.reshape(len(pending), reps)
        hit = ok.any(axis=1)
        first = np.argmax(ok, axis=1)
        winners = pending[hit]
        v[winners] = cand.reshape(len(pending), reps, -1)[hit, first[hit]]
        done[winners] = True
        since_accept[pending[~hit]] += reps
        if np.any(since_accept > max_tries):
            raise SamplingStarvationError(
                f"{strategy.tag}: more than {max_tries} rejected proposals for one pair"
            )
        if hit.mean() < 0.5:
            reps *= 2
    y = kind.exp(x, v)
    return PairSample(x, y, v, np.linalg.norm(v, axis=1), proposals)


def _global_pairs(kind, strategy, n, rng, max_tries):
    """S3: independent uniform pairs, rejected outside the admissible window."""
    xs, ys, proposals, since_accept = [], [], 0, 0
    have = 0
    chunk = max(64, 2 * n)
    while have < n:
        chunk = min(chunk, _CHUNK_CAP)
        x = kind.sample_uniform(rng, chunk)
        y = kind.sample_uniform(rng, chunk)
        d = kind.distance(x, y)
        ok = (d < strategy.eps) & (d >= strategy.min_dist) & kind.unique_geodesic(x, y)
        idx = np.flatnonzero(ok)[: n - have]
        # proposals are consumed in order up to the last needed acceptance
        used = chunk if have + len(idx) < n else int(idx[-1]) + 1
        proposals += used
        if len(idx) == 0:
            since_accept += chunk
            if since_accept > max_tries:
                raise SamplingStarvationError(
                    f"S3: more than {max_tries} rejected proposals for one pair"
                )
            chunk *= 4
            continue
        since_accept = used - int(idx[-1]) - 1
        xs.append(x[idx])
        ys.append(y[idx])
        have += len(idx)
        rate = len(idx) / used
        chunk = int(1.2 * (n - have) / max(rate, 1e-12)) + 64
    if n == 0:
        x = np.zeros((0, kind.n_coords))
        return PairSample(x, x.copy(), x.copy(), np.zeros(0), 0)
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    v = kind.log(x, y)
    return PairSample(x, y, v, kind.distance(x, y), proposals)


def sample_pairs(kind, strategy: SamplingStrategy, n: int, rng: np.random.Generator,
                 max_tries: int = MAX_TRIES) -> PairSample:
    """Draw ``n`` pairs with ``min_dist <= d(x, y) < eps``."""
    kind = get_kind(kind)
    strategy.check(kind)
    if strategy.tag == "S3":
        return _global_pairs(kind, strategy, n, rng, max_tries)
    if n == 0:
        z = np.zeros((0, kind.n_coords))
        return PairSample(z, z.copy(), z.copy(), np.zeros(0), 0)
    return _local_pairs(kind, strategy, n, rng, max_tries)


def sample_pair(kind, strategy: SamplingStrategy, rng: np.random.Generator):
    s = sample_pairs(kind, strategy, 1, rng)
    return s.x[0], s.y[0]


def sample_uniform_pairs(kind, n: int, rng: np.random.Generator, min_dist: float = 0.0):
    """Independent uniform pairs of arbitrary distance with a well-defined midpoint."""
    kind = get_kind(kind)
    xs, ys, have = [], [], 0
    while have < n:
        x = kind.sample_uniform(rng, 2 * (n - have) + 16)
        y = kind.sample_uniform(rng, len(x))
        ok = kind.unique_geodesic(x, y) & (kind.distance(x, y) >= min_dist)
        idx = np.flatnonzero(ok)[: n - have]
        xs.append(x[idx])
        ys.append(y[idx])
        have += len(idx)
    return np.concatenate(xs), np.concatenate(ys)


# ---------------------------------------------------------------------------
# Triples
# ---------------------------------------------------------------------------

PAYLOAD_KEYS = ("x", "y", "mid")


@dataclass
class Triples:
    """A batch of training triples ``(x, y, av(x, y), d(x, y))`` plus optional images."""

    kind: Manifold
    x: np.ndarray
    y: np.ndarray
    mid: np.ndarray
    dist: np.ndarray
    images: dict[str, np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self.dist)

    def inputs(self, which: str) -> np.ndarray:
        """Encoder inputs for ``which`` in {"x", "y", "mid"}: flattened images or chart coords."""
        if self.images is not None:
            a = self.images[which]
            return a.reshape(len(a), -1)
        return getattr(self, which)

    def subset(self, idx) -> "Triples":
        imgs = None if self.images is None else {k: v[idx] for k, v in self.images.items()}
        return Triples(self.kind, self.x[idx], self.y[idx], self.mid[idx], self.dist[idx], imgs)

    @classmethod
    def concatenate(cls, parts: list["Triples"]) -> "Triples":
        kind = parts[0].kind
        imgs = None
        if parts[0].images is not None:
            imgs = {k: np.concatenate([p.images[k] for p in parts]) for k in PAYLOAD_KEYS}
        return cls(
            kind,
            np.concatenate([p.x for p in parts]),
            np.concatenate([p.y for p in parts]),
            np.concatenate([p.mid for p in parts]),
            np.concatenate([p.dist for p in parts]),
            imgs,
        )


def make_triples(kind, x, y, renderer: Callable[[np.ndarray], np.ndarray] | None = None) -> Triples:
    """Complete pairs to triples; ``renderer`` maps a batch of points to images."""
    kind = get_kind(kind)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    mid = kind.mean(x, y)
    dist = kind.distance(x, y)
    images = None
    if renderer is not None:
        images = {"x": renderer(x), "y": renderer(y), "mid": renderer(mid)}
    return Triples(kind, x, y, mid, dist, images)


def make_triple(kind, x, y, renderer=None) -> Triples:
    return make_triples(kind, np.asarray(x)[None], np.asarray(y)[None], renderer)


def sample_triples(kind, strategy: SamplingStrategy, n: int, rng: np.random.Generator,
                   renderer=None) -> Triples:
    kind = get_kind(kind)
    s = sample_pairs(kind, strategy, n, rng)
    return make_triples(kind, s.x, s.y, renderer) if n else Triples(
        kind, s.x, s.y, s.x.copy(), s.dist, None)


# ---------------------------------------------------------------------------
# Limit density
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DensityLimit:
    """Limit pair density ``rho(x, w)`` in normalized normal coordinates ``w in B_1``.

    ``inner`` is the radius of the excluded core for the annulus variant.
    """

    value: float
    inner: float = 0.0

    def __call__(self, x, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        r = np.linalg.norm(w, axis=-1)
        out = np.full(r.shape, self.value)
        if self.inner > 0.0:
            out = np.where(r >= self.inner, out, 0.0)
        return out


def density_limit(kind, strategy: SamplingStrategy | None = None) -> DensityLimit:
    """``1 / (vol(M) * |B_1^m|)``, the same for all three strategies."""
    kind = get_kind(kind)
    return DensityLimit(1.0 / (kind.volume * kind.unit_ball_volume))


def annulus_density_limit(kind, strategy: SamplingStrategy) -> DensityLimit:
    """Limit density when ``min_dist / eps`` is held fixed: uniform on the annulus."""
    kind = get_kind(kind)
    a = strategy.min_dist / strategy.eps
    base = density_limit(kind).value
    return DensityLimit(base / (1.0 - a ** kind.dim), inner=a)


# ---------------------------------------------------------------------------
# Triple files
# ---------------------------------------------------------------------------


def triple_header(kind: Manifold) -> list[str]:
    d = kind.n_coords
    cols = ["index"]
    for key in PAYLOAD_KEYS:
        cols += [f"{key}_{i}" for i in range(d)]
    return cols + ["dist", "payload"]


def write_triples(path, triples: Triples, with_payload: bool | None = None) -> None:
    path = Path(path)
    if with_payload is None:
        with_payload = triples.images is not None
    lines = [",".join(triple_header(triples.kind))]
    for i in range(len(triples)):
        vals = [*triples.x[i], *triples.y[i], *triples.mid[i], triples.dist[i]]
        lines.append(",".join([str(i)] + [repr(float(v)) for v in vals] + [str(i if with_payload else -1)]))
    path.write_text("\n".join(lines) + "\n")


def read_triples(path, kind) -> tuple[Triples, np.ndarray]:
    """Return the triples and the payload index column."""
    kind = get_kind(kind)
    text = Path(path).read_text().splitlines()
    header = text[0].split(",")
    if header != triple_header(kind):
        raise ValueError(f"{path}: header does not match the {kind.name} triple layout")
    d = kind.n_coords
    rows = [line.split(",") for line in text[1:] if line]
    if not rows:
        z = np.zeros((0, d))
        return Triples(kind, z, z.copy(), z.copy(), np.zeros(0)), np.zeros(0, dtype=np.int64)
    vals = np.array([[float(v) for v in r[1:-1]] for r in rows])
    payload = np.array([int(r[-1]) for r in rows], dtype=np.int64)
    t = Triples(kind, vals[:, :d], vals[:, d:2 * d], vals[:, 2 * d:3 * d], vals[:, 3 * d])
    return t, payload
