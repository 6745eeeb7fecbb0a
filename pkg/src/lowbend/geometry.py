"""Closed-form Riemannian geometry of the four test manifolds.

Each manifold is a :class:`Manifold` subclass whose methods act on numpy
arrays with the chart coordinates on the last axis, so a single point has
shape ``(d,)`` and a batch has shape ``(N, d)``.  Tangent vectors are stored
in the ambient representation of the chart (a 3-vector orthogonal to the
base point on the hemisphere, a 4-vector orthogonal to the quaternion on the
rotation group, plain chart increments on the flat kinds).  ``frame(x)``
returns the orthonormal frame that identifies ``R^m`` with the tangent space.

Distances use ``2*atan2(|x-y|, |x+y|)`` for the spherical kinds, which equals
``arccos(x.y)`` but keeps full precision for nearly coincident points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePairError, KindMismatchError, OutOfDomainError

# Ties in the minimal-geodesic search closer than this are reported as degenerate.
_TIE_TOL = 1e-12


def _norm(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(a * a, axis=-1))


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(a * b, axis=-1)


def _unit_ball_volume(m: int) -> float:
    return math.pi ** (m / 2) / math.gamma(m / 2 + 1)


def _wrap_unit(t: np.ndarray, period: float) -> np.ndarray:
    """Reduce ``t`` to ``[0, period)`` without ever returning ``period``."""
    r = np.mod(t, period)
    return np.where(r >= period, 0.0, r)


class Manifold:
    """Common interface; subclasses implement the closed forms."""

    name: str = ""
    dim: int = 0
    n_coords: int = 0
    volume: float = 1.0
    diameter: float = 1.0
    injectivity_bound: float = 1.0
    curvature: float = 0.0

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"

    # -- metric data --------------------------------------------------------
    @property
    def ricci(self) -> float:
        """Ricci curvature on unit vectors, constant for all four kinds."""
        return (self.dim - 1) * self.curvature

    def det_metric(self, r) -> np.ndarray:
        """det of the metric in normal coordinates at geodesic radius ``r``."""
        return self.volume_density(r) ** 2

    def volume_density(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.curvature == 0.0:
            return np.ones_like(r)
        k = math.sqrt(self.curvature)
        safe = np.where(r == 0.0, 1.0, r)
        ratio = np.where(r == 0.0, 1.0, np.sin(k * safe) / (k * safe))
        return ratio ** (self.dim - 1)

    @property
    def unit_ball_volume(self) -> float:
        return _unit_ball_volume(self.dim)

    # -- interface ------------------------------------------------------------
    def reduce(self, x):
        raise NotImplementedError

    def contains(self, x, tol: float = 1e-12) -> np.ndarray:
        raise NotImplementedError

    def distance(self, x, y):
        raise NotImplementedError

    def log(self, x, y):
        raise NotImplementedError

    def exp(self, x, v):
        raise NotImplementedError

    def mean(self, x, y):
        raise NotImplementedError

    def frame(self, x):
        raise NotImplementedError

    def sample_uniform(self, rng: np.random.Generator, n: int):
        raise NotImplementedError

    def admissible(self, x, v) -> np.ndarray:
        """True where the geodesic ``t -> exp_x(t v)``, ``t in [0, 1]``, stays in M."""
        return _norm(np.asarray(v, dtype=float)) < self.injectivity_bound

    def unique_geodesic(self, x, y) -> np.ndarray:
        """True where ``x`` and ``y`` are joined by a unique minimal geodesic."""
        raise NotImplementedError

    def in_neighborhood(self, x, y, eps: float) -> np.ndarray:
        # Every kind here is geodesically convex below its injectivity bound,
        # so the exp-reachable eps-ball is the metric eps-ball.
        return self.distance(x, y) < eps

    def chart_grid(self, n: int) -> tuple[np.ndarray, float]:
        """Regular chart grid with ``n`` nodes per chart direction and its spacing."""
        raise NotImplementedError

    def to_frame(self, x, v) -> np.ndarray:
        """Coordinates of the tangent vector ``v`` in ``frame(x)``."""
        return np.einsum("...ij,...i->...j", self.frame(x), v)

    def from_frame(self, x, w) -> np.ndarray:
        return np.einsum("...ij,...j->...i", self.frame(x), w)


class _SphereLike(Manifold):
    """Unit sphere geometry shared by the hemisphere and the quaternion model."""

    curvature = 1.0

    def _align(self, x, y):
        return y

    def _check_unique(self, x, y):
        pass

    def distance(self, x, y):
        x = np.asarray(x, dtype=float)
        y = self._align(x, np.asarray(y, dtype=float))
        return 2.0 * np.arctan2(_norm(x - y), _norm(x + y))

    def log(self, x, y):
        x = np.asarray(x, dtype=float)
        y = self._align(x, np.asarray(y, dtype=float))
        self._check_unique(x, y)
        d = 2.0 * np.arctan2(_norm(x - y), _norm(x + y))
        u = y - _dot(x, y)[..., None] * x
        nu = _norm(u)
        if np.any((nu == 0.0) & (d > 1.0)):
            raise DegeneratePairError("antipodal pair has no unique geodesic")
        scale = np.where(nu > 0.0, d / np.where(nu > 0.0, nu, 1.0), 0.0)
        return u * scale[..., None]

    def _exp_raw(self, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        t = _norm(v)
        # sin(t)/t without dividing by zero
        sinc = np.sinc(t / np.pi)
        y = np.cos(t)[..., None] * x + sinc[..., None] * v
        return y / _norm(y)[..., None]

    def unique_geodesic(self, x, y):
        x = np.asarray(x, dtype=float)
        y = self._align(x, np.asarray(y, dtype=float))
        return (_norm(x + y) >= _TIE_TOL) & (np.abs(_dot(x, y)) >= self._tie_dot)

    _tie_dot = 0.0

    def mean(self, x, y):
        x = np.asarray(x, dtype=float)
        y = self._align(x, np.asarray(y, dtype=float))
        self._check_unique(x, y)
        s = x + y
        ns = _norm(s)
        if np.any(ns < _TIE_TOL):
            raise DegeneratePairError("midpoint of antipodal points is not unique")
        return self.reduce(s / ns[..., None])


class Hemisphere(_SphereLike):
    """Closed upper unit hemisphere ``S^2 ∩ {x3 >= 0}``."""

    name = "hemisphere"
    dim = 2
    n_coords = 3
    volume = 2.0 * math.pi
    diameter = math.pi
    injectivity_bound = math.pi

    def reduce(self, x):
        x = np.asarray(x, dtype=float)
        return x / _norm(x)[..., None]

    def contains(self, x, tol=1e-12):
        x = np.asarray(x, dtype=float)
        return (np.abs(_norm(x) - 1.0) <= tol) & (x[..., 2] >= -tol)

    def exp(self, x, v):
        y = self._exp_raw(x, v)
        if np.any(y[..., 2] < -1e-12):
            raise OutOfDomainError("geodesic leaves the closed upper hemisphere")
        return y

    def admissible(self, x, v):
        # The minor arc between two points of the closed upper hemisphere
        # stays in it, so checking the endpoint suffices.
        ok = super().admissible(x, v)
        return ok & (self._exp_raw(x, v)[..., 2] >= 0.0)

    def frame(self, x):
        x = np.asarray(x, dtype=float)
        a = np.zeros_like(x)
        use_e1 = np.abs(x[..., 0]) < 0.9
        a[..., 0] = np.where(use_e1, 1.0, 0.0)
        a[..., 1] = np.where(use_e1, 0.0, 1.0)
        u1 = a - _dot(a, x)[..., None] * x
        u1 = u1 / _norm(u1)[..., None]
        u2 = np.cross(x, u1)
        return np.stack([u1, u2], axis=-1)

    def sample_uniform(self, rng, n):
        g = rng.standard_normal((n, 3))
        x = g / _norm(g)[:, None]
        x[:, 2] = np.abs(x[:, 2])
        return x

    def chart_grid(self, n):
        step = 0.5 * math.pi / n
        polar = (np.arange(n) + 0.5) * step
        azim = 2.0 * math.pi * np.arange(n) / n
        P, A = np.meshgrid(polar, azim, indexing="ij")
        pts = np.stack([np.sin(P) * np.cos(A), np.sin(P) * np.sin(A), np.cos(P)], axis=-1)
        return pts.reshape(-1, 3), step


def quat_mul(p, q) -> np.ndarray:
    """Hamilton product with scalar-first convention ``(w, x, y, z)``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    pw, px, py, pz = np.moveaxis(p, -1, 0)
    qw, qx, qy, qz = np.moveaxis(q, -1, 0)
    return np.stack(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ],
        axis=-1,
    )


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion; identical for ``q`` and ``-q``."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    R = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return R.reshape(q.shape[:-1] + (3, 3))


class Rotations(_SphereLike):
    """SO(3) as unit quaternions modulo sign, metric of the unit 3-sphere."""

    name = "rotations"
    dim = 3
    n_coords = 4
    volume = math.pi ** 2
    diameter = math.pi / 2
    injectivity_bound = math.pi / 2

    def reduce(self, q):
        q = np.asarray(q, dtype=float)
        q = q / _norm(q)[..., None]
        first = np.argmax(q != 0.0, axis=-1)
        lead = np.take_along_axis(q, first[..., None], axis=-1)
        return q * np.where(lead < 0.0, -1.0, 1.0)

    def contains(self, q, tol=1e-12):
        q = np.asarray(q, dtype=float)
        first = np.argmax(q != 0.0, axis=-1)
        lead = np.take_along_axis(q, first[..., None], axis=-1)[..., 0]
        return (np.abs(_norm(q) - 1.0) <= tol) & (lead > 0.0)

    _tie_dot = _TIE_TOL

    def _align(self, x, y):
        return y * np.where(_dot(x, y) < 0.0, -1.0, 1.0)[..., None]

    def _check_unique(self, x, y):
        if np.any(np.abs(_dot(x, y)) < _TIE_TOL):
            raise DegeneratePairError("rotations at distance pi/2 have two minimal geodesics")

    def exp(self, x, v):
        return self.reduce(self._exp_raw(x, v))

    def frame(self, q):
        q = np.asarray(q, dtype=float)
        basis = np.eye(4)[1:]
        cols = [quat_mul(q, np.broadcast_to(b, q.shape)) for b in basis]
        return np.stack(cols, axis=-1)

    def sample_uniform(self, rng, n):
        g = rng.standard_normal((n, 4))
        return self.reduce(g)

    def chart_grid(self, n):
        # exponential coordinates at the identity, clipped to the injectivity ball
        step = math.pi / n
        c = -0.5 * math.pi + (np.arange(n) + 0.5) * step
        W = np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1).reshape(-1, 3)
        W = W[_norm(W) < self.injectivity_bound]
        ident = np.broadcast_to(np.array([1.0, 0.0, 0.0, 0.0]), (len(W), 4))
        return self.exp(ident, np.concatenate([np.zeros((len(W), 1)), W], axis=1)), step


class KleinBottle(Manifold):
    """Flat Klein bottle ``[0,1)^2`` with ``(x,0)~(x,1)`` and ``(0,y)~(1,1-y)``."""

    name = "klein"
    dim = 2
    n_coords = 2
    volume = 1.0
    diameter = 1.0 / math.sqrt(2.0)
    injectivity_bound = 0.5

    def reduce(self, p):
        p = np.array(p, dtype=float, copy=True)
        a = np.floor(p[..., 0])
        x = p[..., 0] - a
        flip = np.mod(a, 2.0) == 1.0
        over = x >= 1.0
        x = np.where(over, 0.0, x)
        flip = flip ^ over
        y = np.where(flip, 1.0 - p[..., 1], p[..., 1])
        p[..., 0] = x
        p[..., 1] = _wrap_unit(y, 1.0)
        return p

    def contains(self, p, tol=1e-12):
        p = np.asarray(p, dtype=float)
        return np.all((p >= 0.0) & (p < 1.0), axis=-1)

    def _copies(self, q):
        """The nine representatives of ``q`` around the fundamental domain."""
        q = np.asarray(q, dtype=float)
        out = []
        for a in (-1.0, 0.0, 1.0):
            qy = q[..., 1] if a == 0.0 else 1.0 - q[..., 1]
            for b in (-1.0, 0.0, 1.0):
                out.append(np.stack([q[..., 0] + a, qy + b], axis=-1))
        return np.stack(out, axis=-2)

    def _nearest(self, p, q):
        p = np.asarray(p, dtype=float)
        cands = self._copies(q)
        diff = cands - p[..., None, :]
        dist = _norm(diff)
        idx = np.argmin(dist, axis=-1)
        best = np.take_along_axis(diff, idx[..., None, None], axis=-2)[..., 0, :]
        return best, dist, idx

    def distance(self, p, q):
        # symmetric by construction: min over both directions of the copy search
        _, d1, _ = self._nearest(p, q)
        _, d2, _ = self._nearest(q, p)
        return np.minimum(np.min(d1, axis=-1), np.min(d2, axis=-1))

    def log(self, p, q):
        best, dist, _ = self._nearest(p, q)
        srt = np.sort(dist, axis=-1)
        if np.any(srt[..., 1] - srt[..., 0] < _TIE_TOL):
            raise DegeneratePairError("pair lies on the cut locus of the Klein bottle")
        return best

    def unique_geodesic(self, p, q):
        _, dist, _ = self._nearest(p, q)
        srt = np.sort(dist, axis=-1)
        return srt[..., 1] - srt[..., 0] >= _TIE_TOL

    def exp(self, p, v):
        return self.reduce(np.asarray(p, dtype=float) + np.asarray(v, dtype=float))

    def mean(self, p, q):
        return self.exp(p, 0.5 * self.log(p, q))

    def frame(self, p):
        p = np.asarray(p, dtype=float)
        return np.broadcast_to(np.eye(2), p.shape[:-1] + (2, 2))

    def to_frame(self, p, v):
        return np.asarray(v, dtype=float)

    def from_frame(self, p, w):
        return np.asarray(w, dtype=float)

    def sample_uniform(self, rng, n):
        return rng.random((n, 2))

    def chart_grid(self, n):
        c = (np.arange(n) + 0.5) / n
        return np.stack(np.meshgrid(c, c, indexing="ij"), axis=-1).reshape(-1, 2), 1.0 / n


class EllipseSpace(Manifold):
    """``[0, pi) x [-1, 1]^2`` with periodic angle: ellipse pose space."""

    name = "ellipse"
    dim = 3
    n_coords = 3
    volume = 4.0 * math.pi
    diameter = math.sqrt(math.pi ** 2 / 4 + 8.0)
    injectivity_bound = math.pi / 2

    def reduce(self, p):
        p = np.array(p, dtype=float, copy=True)
        p[..., 0] = _wrap_unit(p[..., 0], math.pi)
        return p

    def contains(self, p, tol=1e-12):
        p = np.asarray(p, dtype=float)
        th_ok = (p[..., 0] >= 0.0) & (p[..., 0] < math.pi)
        return th_ok & np.all(np.abs(p[..., 1:]) <= 1.0 + tol, axis=-1)

    @staticmethod
    def _theta_gap(t1, t2):
        delta = t1 - t2
        return np.minimum(np.abs(delta), np.minimum(np.abs(delta + math.pi), np.abs(delta - math.pi)))

    def distance(self, p, q):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        dth = self._theta_gap(p[..., 0], q[..., 0])
        dy = p[..., 1:] - q[..., 1:]
        return np.sqrt(dth * dth + np.sum(dy * dy, axis=-1))

    def log(self, p, q):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        delta = q[..., 0] - p[..., 0]
        delta = delta - math.pi * np.round(delta / math.pi)
        if np.any(math.pi / 2 - np.abs(delta) < _TIE_TOL):
            raise DegeneratePairError("angle gap of pi/2 has two minimal geodesics")
        return np.concatenate([delta[..., None], q[..., 1:] - p[..., 1:]], axis=-1)

    def unique_geodesic(self, p, q):
        delta = np.asarray(q, dtype=float)[..., 0] - np.asarray(p, dtype=float)[..., 0]
        delta = delta - math.pi * np.round(delta / math.pi)
        return math.pi / 2 - np.abs(delta) >= _TIE_TOL

    def exp(self, p, v):
        out = np.asarray(p, dtype=float) + np.asarray(v, dtype=float)
        if np.any(np.abs(out[..., 1:]) > 1.0 + 1e-12):
            raise OutOfDomainError("geodesic leaves the translation square")
        return self.reduce(out)

    def admissible(self, p, v):
        ok = super().admissible(p, v)
        end = np.asarray(p, dtype=float)[..., 1:] + np.asarray(v, dtype=float)[..., 1:]
        return ok & np.all(np.abs(end) <= 1.0, axis=-1)

    def mean(self, p, q):
        return self.exp(p, 0.5 * self.log(p, q))

    def frame(self, p):
        p = np.asarray(p, dtype=float)
        return np.broadcast_to(np.eye(3), p.shape[:-1] + (3, 3))

    def to_frame(self, p, v):
        return np.asarray(v, dtype=float)

    def from_frame(self, p, w):
        return np.asarray(w, dtype=float)

    def sample_uniform(self, rng, n):
        th = rng.random(n) * math.pi
        y = rng.random((n, 2)) * 2.0 - 1.0
        return np.column_stack([th, y])

    def chart_grid(self, n):
        th = (np.arange(n) + 0.5) * math.pi / n
        y = -1.0 + (np.arange(n) + 0.5) * 2.0 / n
        g = np.stack(np.meshgrid(th, y, y, indexing="ij"), axis=-1).reshape(-1, 3)
        return g, min(math.pi / n, 2.0 / n)


HEMISPHERE = Hemisphere()
ROTATIONS = Rotations()
KLEIN = KleinBottle()
ELLIPSE = EllipseSpace()

KINDS: dict[str, Manifold] = {k.name: k for k in (HEMISPHERE, ROTATIONS, KLEIN, ELLIPSE)}
_ALIASES = {
    "s": "hemisphere", "sundial": "hemisphere", "sphere": "hemisphere",
    "r": "rotations", "so3": "rotations",
    "a": "klein", "kleinbottle": "klein", "klein_bottle": "klein",
    "e": "ellipse", "ellipsespace": "ellipse", "ellipses": "ellipse",
}


def get_kind(kind: str | Manifold) -> Manifold:
    if isinstance(kind, Manifold):
        return kind
    key = kind.strip().lower()
    key = _ALIASES.get(key, key)
    try:
        return KINDS[key]
    except KeyError:
        raise ValueError(f"unknown manifold kind {kind!r}; expected one of {sorted(KINDS)}") from None


# ---------------------------------------------------------------------------
# Point-level API with kind checking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifoldPoint:
    kind: Manifold
    coords: np.ndarray = field(repr=True)

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float))


@dataclass(frozen=True)
class TangentVector:
    base: ManifoldPoint
    vec: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vec", np.asarray(self.vec, dtype=float))


def point(kind, coords) -> ManifoldPoint:
    k = get_kind(kind)
    return ManifoldPoint(k, k.reduce(coords))


def _same_kind(x: ManifoldPoint, y: ManifoldPoint) -> Manifold:
    if x.kind is not y.kind:
        raise KindMismatchError(f"points on {x.kind.name} and {y.kind.name}")
    return x.kind


def distance(x: ManifoldPoint, y: ManifoldPoint) -> float:
    return float(_same_kind(x, y).distance(x.coords, y.coords))


def mean(x: ManifoldPoint, y: ManifoldPoint) -> ManifoldPoint:
    k = _same_kind(x, y)
    return ManifoldPoint(k, k.mean(x.coords, y.coords))


def log_map(x: ManifoldPoint, y: ManifoldPoint) -> TangentVector:
    k = _same_kind(x, y)
    return TangentVector(x, k.log(x.coords, y.coords))


def exp_map(x: ManifoldPoint, v: TangentVector) -> ManifoldPoint:
    if v.base.kind is not x.kind:
        raise KindMismatchError("tangent vector based on a different manifold")
    return ManifoldPoint(x.kind, x.kind.exp(x.coords, v.vec))


def sample_uniform(kind, rng: np.random.Generator) -> ManifoldPoint:
    k = get_kind(kind)
    return ManifoldPoint(k, k.sample_uniform(rng, 1)[0])


def in_neighborhood(x: ManifoldPoint, y: ManifoldPoint, eps: float) -> bool:
    return bool(_same_kind(x, y).in_neighborhood(x.coords, y.coords, eps))
