"""Quadrature of the local limit functional and numerical checks of its analysis.

Embeddings expose their first and second covariant derivatives in the
orthonormal tangent frame of each kind: ``jacobian(x)`` has shape ``(N, l, m)``
with column ``i`` equal to ``dphi(E_i)``, and ``hessian(x)`` has shape
``(N, l, m, m)`` holding the Riemannian Hessian as a bilinear form.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import isotonic_regression
from scipy.special import roots_legendre, roots_jacobi

from .errors import DegenerateConeError, DivisionGuardError, OutOfDomainError, UnsupportedKindError
from .geometry import HEMISPHERE, KLEIN, ROTATIONS, ELLIPSE, Manifold, get_kind
from .loss import LossBreakdown, LossWeights, gamma, mc_continuous_loss
from .sampling import SamplingStrategy, density_limit

_OUTER_MC = 1 << 16


# ---------------------------------------------------------------------------
# Embeddings with closed-form derivatives
# ---------------------------------------------------------------------------


@dataclass
class AnalyticEmbedding:
    kind: Manifold
    name: str
    phi: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    lipschitz: tuple[float, float] | None
    cover: Callable[[np.ndarray], np.ndarray] | None = None

    def __call__(self, x):
        return self.phi(np.asarray(x, dtype=float))

    def grad(self, x, w):
        """``g_x(grad phi, iota_x w)`` for frame coordinates ``w``."""
        return np.einsum("nlm,nm->nl", self.jacobian(x), np.asarray(w, dtype=float))

    def hess(self, x, w):
        """``g_x(Hess phi[iota_x w], iota_x w)``."""
        w = np.asarray(w, dtype=float)
        return np.einsum("nlab,na,nb->nl", self.hessian(x), w, w)

    def eval_exp(self, x, v):
        """``phi(exp_x(v))``; flat kinds evaluate on the covering plane without reduction."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.cover is not None:
            return self.cover(x + v)
        return self.phi(self.kind.exp(x, v))

    def scaled(self, s: float) -> "AnalyticEmbedding":
        lip = None if self.lipschitz is None else (abs(s) * self.lipschitz[0], abs(s) * self.lipschitz[1])
        cover = None if self.cover is None else (lambda p, f=self.cover: s * f(p))
        return AnalyticEmbedding(
            self.kind, f"{s:g}*{self.name}",
            lambda x, f=self.phi: s * f(x),
            lambda x, f=self.jacobian: s * f(x),
            lambda x, f=self.hessian: s * f(x),
            lip, cover,
        )


def _rows(x):
    x = np.asarray(x, dtype=float)
    return x[None] if x.ndim == 1 else x


def hemisphere_inclusion(scale: float = 1.0) -> AnalyticEmbedding:
    """The hemisphere sitting in R^3; ``L_grad = L_hess = 1``."""
    kind = HEMISPHERE

    def jac(x):
        return kind.frame(_rows(x))

    def hess(x):
        x = _rows(x)
        return -x[:, :, None, None] * np.eye(2)

    emb = AnalyticEmbedding(kind, "inclusion", lambda x: np.array(x, dtype=float), jac, hess, (1.0, 1.0))
    return emb if scale == 1.0 else emb.scaled(scale)


def rotations_veronese() -> AnalyticEmbedding:
    """``q -> q q^T / sqrt(2)`` flattened to R^16: isometric, constant normal curvature 2."""
    kind = ROTATIONS
    r2 = math.sqrt(2.0)

    def phi(q):
        q = _rows(q)
        return np.einsum("ni,nj->nij", q, q).reshape(len(q), 16) / r2

    def jac(q):
        q = _rows(q)
        E = kind.frame(q)  # (N, 4, 3)
        d = np.einsum("nia,nj->nija", E, q)
        return (d + d.transpose(0, 2, 1, 3)).reshape(len(q), 16, 3) / r2

    def hess(q):
        q = _rows(q)
        E = kind.frame(q)
        ee = np.einsum("nia,njb->nijab", E, E)
        ee = ee + ee.transpose(0, 2, 1, 4, 3)
        qq = np.einsum("ni,nj->nij", q, q)
        h = ee - 2.0 * qq[:, :, :, None, None] * np.eye(3)
        return h.reshape(len(q), 16, 3, 3) / r2

    return AnalyticEmbedding(kind, "veronese", phi, jac, hess, (2.0, 4.0))


def klein_trig() -> AnalyticEmbedding:
    """``(cos 2pi x, sin 2pi x, cos 2pi y, sin 2pi y cos pi x, sin 2pi y sin pi x)`` in R^5.

    The formula respects the gluing ``(x, y) ~ (x + 1, 1 - y)``, so it is a
    smooth map of the bottle.  Lipschitz bounds sum squared per-component
    frequency bounds.
    """
    tp, p = 2.0 * math.pi, math.pi

    def phi(q):
        q = _rows(q)
        x, y = q[:, 0], q[:, 1]
        s2y = np.sin(tp * y)
        return np.column_stack([np.cos(tp * x), np.sin(tp * x), np.cos(tp * y),
                                s2y * np.cos(p * x), s2y * np.sin(p * x)])

    def jac(q):
        q = _rows(q)
        x, y = q[:, 0], q[:, 1]
        s2x, c2x, s2y, c2y = np.sin(tp * x), np.cos(tp * x), np.sin(tp * y), np.cos(tp * y)
        sx, cx = np.sin(p * x), np.cos(p * x)
        z = np.zeros_like(x)
        J = np.empty((len(q), 5, 2))
        J[:, 0] = np.column_stack([-tp * s2x, z])
        J[:, 1] = np.column_stack([tp * c2x, z])
        J[:, 2] = np.column_stack([z, -tp * s2y])
        J[:, 3] = np.column_stack([-p * s2y * sx, tp * c2y * cx])
        J[:, 4] = np.column_stack([p * s2y * cx, tp * c2y * sx])
        return J

    def hess(q):
        q = _rows(q)
        x, y = q[:, 0], q[:, 1]
        s2x, c2x, s2y, c2y = np.sin(tp * x), np.cos(tp * x), np.sin(tp * y), np.cos(tp * y)
        sx, cx = np.sin(p * x), np.cos(p * x)
        H = np.zeros((len(q), 5, 2, 2))
        H[:, 0, 0, 0] = -tp * tp * c2x
        H[:, 1, 0, 0] = -tp * tp * s2x
        H[:, 2, 1, 1] = -tp * tp * c2y
        H[:, 3, 0, 0] = -p * p * s2y * cx
        H[:, 3, 1, 1] = -tp * tp * s2y * cx
        H[:, 3, 0, 1] = H[:, 3, 1, 0] = -tp * p * c2y * sx
        H[:, 4, 0, 0] = -p * p * s2y * sx
        H[:, 4, 1, 1] = -tp * tp * s2y * sx
        H[:, 4, 0, 1] = H[:, 4, 1, 0] = tp * p * c2y * cx
        return H

    w_sq = [tp ** 2] * 3 + [5.0 * p ** 2] * 2
    lip = (math.sqrt(sum(b ** 2 for b in w_sq)), math.sqrt(sum(b ** 3 for b in w_sq)))
    return AnalyticEmbedding(KLEIN, "trig", phi, jac, hess, lip, cover=phi)


def ellipse_cylinder() -> AnalyticEmbedding:
    """``(cos 2t / 2, sin 2t / 2, y1, y2)``: isometric, curved only along the angle."""

    def phi(q):
        q = _rows(q)
        t = q[:, 0]
        return np.column_stack([0.5 * np.cos(2 * t), 0.5 * np.sin(2 * t), q[:, 1], q[:, 2]])

    def jac(q):
        q = _rows(q)
        t = q[:, 0]
        J = np.zeros((len(q), 4, 3))
        J[:, 0, 0] = -np.sin(2 * t)
        J[:, 1, 0] = np.cos(2 * t)
        J[:, 2, 1] = 1.0
        J[:, 3, 2] = 1.0
        return J

    def hess(q):
        q = _rows(q)
        t = q[:, 0]
        H = np.zeros((len(q), 4, 3, 3))
        H[:, 0, 0, 0] = -2.0 * np.cos(2 * t)
        H[:, 1, 0, 0] = -2.0 * np.sin(2 * t)
        return H

    return AnalyticEmbedding(ELLIPSE, "cylinder", phi, jac, hess, (2.0, 4.0), cover=phi)


def flat_linear(kind, l: int | None = None, rng: np.random.Generator | None = None) -> AnalyticEmbedding:
    """Affine isometry ``p -> Q p + b`` of the covering plane of a flat kind."""
    kind = get_kind(kind)
    if kind.curvature != 0.0:
        raise UnsupportedKindError(f"{kind.name} is not flat")
    m = kind.dim
    l = l or m + 1
    rng = rng if rng is not None else np.random.default_rng(0)
    Q, _ = np.linalg.qr(rng.standard_normal((l, m)))
    b = rng.standard_normal(l)

    def phi(p):
        return _rows(p) @ Q.T + b

    def jac(p):
        return np.broadcast_to(Q, (len(_rows(p)), l, m)).copy()

    def hess(p):
        return np.zeros((len(_rows(p)), l, m, m))

    return AnalyticEmbedding(kind, "linear", phi, jac, hess, (0.0, 0.0), cover=phi)


FIXTURES = {
    "hemisphere": hemisphere_inclusion,
    "rotations": rotations_veronese,
    "klein": klein_trig,
    "ellipse": ellipse_cylinder,
}


def network_directional_derivs(kind, phi, x, v, h: float):
    """Central differences of ``t -> phi(exp_x(t v))`` at ``t = 0``."""
    if h == 0.0:
        raise DivisionGuardError("step h must be nonzero")
    kind = get_kind(kind)
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    fp = phi(kind.exp(x, h * v))
    fm = phi(kind.exp(x, -h * v))
    f0 = phi(x)
    return (fp - fm) / (2.0 * h), (fp - 2.0 * f0 + fm) / (h * h)


@dataclass
class NetworkEmbedding:
    """Finite-difference derivatives of a black-box map, for trained networks."""

    kind: Manifold
    phi: Callable[[np.ndarray], np.ndarray]
    h: float | None = None
    name: str = "network"
    lipschitz: tuple[float, float] | None = None

    def __post_init__(self):
        if self.h is None:
            self.h = 1e-3 * self.kind.diameter

    def __call__(self, x):
        return self.phi(np.asarray(x, dtype=float))

    def _dirs(self, x, w):
        return network_directional_derivs(self.kind, self.phi, x, self.kind.from_frame(x, w), self.h)

    def jacobian(self, x):
        x = _rows(x)
        m = self.kind.dim
        cols = [self._dirs(x, np.broadcast_to(np.eye(m)[i], (len(x), m)))[0] for i in range(m)]
        return np.stack(cols, axis=-1)

    def hessian(self, x):
        x = _rows(x)
        m = self.kind.dim
        eye = np.eye(m)
        diag = [self._dirs(x, np.broadcast_to(eye[i], (len(x), m)))[1] for i in range(m)]
        H = np.zeros(diag[0].shape + (m, m))
        for i in range(m):
            H[..., i, i] = diag[i]
            for j in range(i + 1, m):
                u = (eye[i] + eye[j]) / math.sqrt(2.0)
                s = self._dirs(x, np.broadcast_to(u, (len(x), m)))[1]
                H[..., i, j] = H[..., j, i] = s - 0.5 * (diag[i] + diag[j])
        return H

    def grad(self, x, w):
        return self._dirs(_rows(x), w)[0]

    def hess(self, x, w):
        return self._dirs(_rows(x), w)[1]


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights on the unit ball ``B_1^m``.

    ``scheme="radial-angular"`` combines Gauss-Jacobi radial nodes (weight
    ``r^(m-1)``) with a tensor angular rule; ``scheme="mc"`` draws ``n``
    uniform points with equal weights.
    """

    scheme: str = "radial-angular"
    n_r: int = 8
    n_ang: int = 16
    n: int = 4096
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in ("radial-angular", "mc"):
            raise ValueError(f"unknown quadrature scheme {self.scheme!r}")

    def nodes(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        vol = math.pi ** (m / 2) / math.gamma(m / 2 + 1)
        if self.scheme == "mc":
            rng = np.random.default_rng(self.seed)
            g = rng.standard_normal((self.n, m))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            r = rng.random(self.n) ** (1.0 / m)
            return g * r[:, None], np.full(self.n, vol / self.n)
        # int_0^1 f(r) r^(m-1) dr via Gauss-Jacobi on [-1, 1] with (1+t)^(m-1)
        t, wt = roots_jacobi(self.n_r, 0.0, m - 1.0)
        r = 0.5 * (t + 1.0)
        wr = wt / 2.0 ** m
        dirs, wd = _sphere_rule(m, self.n_ang)
        pts = (r[:, None, None] * dirs[None]).reshape(-1, m)
        w = (wr[:, None] * wd[None]).reshape(-1)
        return pts, w


def _sphere_rule(m: int, n_ang: int) -> tuple[np.ndarray, np.ndarray]:
    if m == 1:
        return np.array([[1.0], [-1.0]]), np.ones(2)
    if m == 2:
        a = 2.0 * math.pi * (np.arange(n_ang) + 0.5) / n_ang
        return np.column_stack([np.cos(a), np.sin(a)]), np.full(n_ang, 2.0 * math.pi / n_ang)
    if m == 3:
        z, wz = roots_legendre(n_ang)
        n_az = 2 * n_ang
        a = 2.0 * math.pi * (np.arange(n_az) + 0.5) / n_az
        s = np.sqrt(1.0 - z * z)
        d = np.stack([s[:, None] * np.cos(a), s[:, None] * np.sin(a),
                      np.broadcast_to(z[:, None], (n_ang, n_az))], axis=-1).reshape(-1, 3)
        w = (wz[:, None] * np.full(n_az, 2.0 * math.pi / n_az)).reshape(-1)
        return d, w
    raise UnsupportedKindError(f"radial-angular quadrature supports m <= 3, got {m}")


def outer_nodes(kind: Manifold, n: int | None = None, rng: np.random.Generator | None = None):
    """Integration nodes for ``dV_g``: Gauss-Legendre for flat kinds, MC otherwise.

    Returns ``(points, weights, is_mc)``; weights sum to the volume of M.
    """
    if kind.curvature == 0.0:
        n = n or 24
        lows, highs = _chart_box(kind)
        axes, wax = [], []
        for lo, hi in zip(lows, highs):
            t, w = roots_legendre(n)
            axes.append(0.5 * (hi - lo) * t + 0.5 * (hi + lo))
            wax.append(0.5 * (hi - lo) * w)
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
        w = np.prod(np.stack(np.meshgrid(*wax, indexing="ij"), axis=-1).reshape(-1, len(wax)), axis=1)
        return pts, w, False
    n = n or _OUTER_MC
    rng = rng if rng is not None else np.random.default_rng(0)
    pts = kind.sample_uniform(rng, n)
    return pts, np.full(n, kind.volume / n), True


def _chart_box(kind: Manifold):
    if kind.name == "klein":
        return (0.0, 0.0), (1.0, 1.0)
    if kind.name == "ellipse":
        return (0.0, -1.0, -1.0), (math.pi, 1.0, 1.0)
    raise UnsupportedKindError(f"no chart box for {kind.name}")


def local_limit_loss(kind, emb, weights: LossWeights, quad: QuadratureRule | None = None,
                     density=None, n_outer: int | None = None,
                     rng: np.random.Generator | None = None) -> LossBreakdown:
    """Quadrature of the local functional ``int_M Gamma(grad phi) + lam ||Hess phi||^2 dV_g``."""
    kind = get_kind(kind)
    quad = quad or QuadratureRule()
    rho = density or density_limit(kind)
    w_nodes, w_wts = quad.nodes(kind.dim)
    r = np.linalg.norm(w_nodes, axis=1)
    keep = r > 0
    w_nodes, w_wts, r = w_nodes[keep], w_wts[keep], r[keep]
    # the built-in limit densities do not depend on the base point
    wq = w_wts * rho(None, w_nodes)
    wbar = w_nodes / r[:, None]
    if quad.scheme == "radial-angular":
        # both integrands only see w / |w|: fold the radial nodes per direction
        wq = wq.reshape(quad.n_r, -1).sum(axis=0)
        wbar = wbar[: len(wq)]
    m = kind.dim
    # bending integrand is a quartic form in wbar; integrate it through the fourth moment
    T = np.einsum("k,ka,kb,kc,kd->abcd", wq, wbar, wbar, wbar, wbar).reshape(m * m, m * m)
    xs, xw, is_mc = outer_nodes(kind, n_outer, rng)
    iso_vals, bend_vals = [], []
    step = max(1, int(4_000_000 // (len(wq) * 8)))
    for s in range(0, len(xs), step):
        x = xs[s:s + step]
        J = emb.jacobian(x)
        Hf = emb.hessian(x).reshape(len(x), -1, m * m)
        g1 = J @ wbar.T  # (n, l, K)
        iso_vals.append(gamma(np.sqrt(np.sum(g1 * g1, axis=1)), weights.c) @ wq)
        bend_vals.append(np.sum((Hf @ T) * Hf, axis=(1, 2)))
    iso_x = np.concatenate(iso_vals)
    bend_x = np.concatenate(bend_vals)
    iso = float(iso_x @ xw)
    bend = float(bend_x @ xw)
    stderr, comp = 0.0, {}
    if is_mc:
        vol = kind.volume
        n = len(xs)
        se = lambda a: float(vol * np.std(a, ddof=1) / math.sqrt(n))
        stderr = se(iso_x + weights.lam * bend_x)
        comp = {"isometry": se(iso_x), "bending": se(bend_x)}
    return LossBreakdown.combine(iso, bend, 0.0, weights, len(xs), stderr, comp)


# ---------------------------------------------------------------------------
# Verification routines
# ---------------------------------------------------------------------------


@dataclass
class TableRow:
    param: float
    estimate: float
    stderr: float
    reference: float
    abs_error: float


def write_table(path, rows: list[TableRow], param_name: str = "param") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([param_name, "estimate", "stderr", "reference", "abs_error"])
        for r in rows:
            w.writerow([repr(float(r.param)), repr(float(r.estimate)), repr(float(r.stderr)),
                        repr(float(r.reference)), repr(float(r.abs_error))])


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``; ``nan`` if any ``y`` is zero or under two points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2 or np.any(y <= 0.0):
        return math.nan
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def _admissible_directions(kind: Manifold, x: np.ndarray, r: float, rng: np.random.Generator):
    """Unit frame directions ``w`` with ``exp_x(r iota_x w)`` inside M, resampled until valid."""
    n, m = len(x), kind.dim
    w = np.empty((n, m))
    todo = np.arange(n)
    for _ in range(1000):
        g = rng.standard_normal((len(todo), m))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        ok = kind.admissible(x[todo], kind.from_frame(x[todo], r * g))
        w[todo[ok]] = g[ok]
        todo = todo[~ok]
        if len(todo) == 0:
            return w
    raise OutOfDomainError(f"no admissible direction at radius {r}")


@dataclass
class TaylorReport:
    radii: list[float]
    first_residual: list[float]
    second_residual: list[float]
    first_ratio: list[float]
    second_ratio: list[float]
    first_bound: float
    second_bound: float
    first_slope: float
    second_slope: float
    norm_residual: list[float] = field(default_factory=list)
    norm_slope: float = math.nan
    rounding_floor: list[tuple[float, float]] = field(default_factory=list)

    @property
    def within_bounds(self) -> bool:
        """Residual <= bound * r at every radius, up to the floating-point floor of the quotients."""
        for r, e1, e2, (f1, f2) in zip(self.radii, self.first_residual, self.second_residual,
                                        self.rounding_floor):
            if e1 > self.first_bound * r + f1 or e2 > self.second_bound * r + f2:
                return False
        return True

    def rows(self, order: int = 1) -> list[TableRow]:
        """Residual per radius against the Lipschitz allowance ``bound * r``."""
        res = self.first_residual if order == 1 else self.second_residual
        bound = self.first_bound if order == 1 else self.second_bound
        return [TableRow(r, e, 0.0, bound * r, max(0.0, e - bound * r)) for r, e in zip(self.radii, res)]


def _eval_exp(emb, x, v):
    at_exp = getattr(emb, "eval_exp", None)
    return at_exp(x, v) if at_exp is not None else emb(emb.kind.exp(x, v))


def verify_taylor(kind, emb, radii, n: int = 1000, rng: np.random.Generator | None = None) -> TaylorReport:
    """Worst-case first/second difference-quotient residuals against the analytic derivatives."""
    kind = get_kind(kind)
    if emb.lipschitz is None:
        raise ValueError("embedding carries no Lipschitz bounds")
    rng = rng if rng is not None else np.random.default_rng(0)
    radii = sorted(float(r) for r in radii)
    res1, res2, res_norm, floors = [], [], [], []
    for r in radii:
        x = kind.sample_uniform(rng, n)
        wbar = _admissible_directions(kind, x, r, rng)
        v = kind.from_frame(x, wbar)
        a = _eval_exp(emb, x, np.zeros_like(v))
        b = _eval_exp(emb, x, r * v)
        mid = _eval_exp(emb, x, 0.5 * r * v)
        q1 = (b - a) / r
        q2 = 8.0 * (0.5 * (a + b) - mid) / (r * r)
        g1 = emb.grad(x, wbar)
        res1.append(float(np.max(np.linalg.norm(q1 - g1, axis=1))))
        res2.append(float(np.max(np.linalg.norm(q2 - emb.hess(x, wbar), axis=1))))
        res_norm.append(float(np.max(np.abs(np.linalg.norm(q1, axis=1) - np.linalg.norm(g1, axis=1)))))
        scale = float(np.max(np.abs(np.concatenate([a, b, mid])))) + 1.0
        ulp = 64.0 * np.finfo(float).eps * scale
        floors.append((ulp / r, 8.0 * ulp / (r * r)))
    L1, L2 = emb.lipschitz
    return TaylorReport(
        radii, res1, res2,
        [e / r for e, r in zip(res1, radii)], [e / r for e, r in zip(res2, radii)],
        0.5 * L1, 5.0 / 6.0 * L2,
        loglog_slope(radii, res1), loglog_slope(radii, res2),
        res_norm, loglog_slope(radii, res_norm), floors,
    )


def numerical_det_metric(kind, x, w, eps: float, h: float = 1e-5) -> np.ndarray:
    """``det G`` of ``u -> exp_x(iota_x u)`` at ``u = eps w`` by central differences in the ambient space."""
    kind = get_kind(kind)
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    m = kind.dim
    u = eps * w
    # unreduced exponential: the sign fold of the quaternion model is not smooth
    expo = getattr(kind, "_exp_raw", lambda p, v: p + v)
    cols = []
    for i in range(m):
        e = np.zeros(m)
        e[i] = h
        fp = expo(x, kind.from_frame(x, u + e))
        fm = expo(x, kind.from_frame(x, u - e))
        cols.append((fp - fm) / (2.0 * h))
    D = np.stack(cols, axis=-1)
    return np.linalg.det(np.einsum("...ki,...kj->...ij", D, D))


@dataclass
class VolumeReport:
    eps: list[float]
    max_error: list[float]
    fd_discrepancy: list[float]
    slope: float

    def rows(self) -> list[TableRow]:
        return [TableRow(e, err, fd, 0.0, err) for e, err, fd in zip(self.eps, self.max_error, self.fd_discrepancy)]


def verify_volume_expansion(kind, eps_list, n_radial: int = 16, n_dirs: int = 16,
                            rng: np.random.Generator | None = None) -> VolumeReport:
    """Max over a ``w`` grid in ``B_1`` of ``|det G(eps w) - (1 - Ric |w|^2 eps^2 / 3)|``.

    The closed form is cross-checked by finite differences of the exponential map.
    """
    kind = get_kind(kind)
    rng = rng if rng is not None else np.random.default_rng(0)
    m = kind.dim
    radii = np.linspace(0.0, 1.0, n_radial + 1)[1:]
    g = rng.standard_normal((n_dirs, m))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    w = (radii[:, None, None] * g[None]).reshape(-1, m)
    x = kind.sample_uniform(rng, len(w))
    errs, fds = [], []
    for eps in eps_list:
        rr = eps * np.linalg.norm(w, axis=1)
        det = kind.det_metric(rr)
        expansion = 1.0 - kind.ricci * rr ** 2 / 3.0
        errs.append(float(np.max(np.abs(det - expansion))))
        if kind.curvature != 0.0:
            fds.append(float(np.max(np.abs(numerical_det_metric(kind, x, w, eps) - det))))
        else:
            fds.append(0.0)
    slope = loglog_slope(eps_list, errs) if all(e > 0 for e in errs) else math.inf
    return VolumeReport(list(map(float, eps_list)), errs, fds, slope)


@dataclass
class ConvergenceReport:
    rows: list[TableRow]
    slope: float
    monotone_fit: list[float]
    within_fit: bool


def verify_epsilon_convergence(kind, emb, eps_list, weights: LossWeights, n: int, tag: str = "S1",
                               reference: float | None = None, seed: int = 0,
                               quad: QuadratureRule | None = None) -> ConvergenceReport:
    """``|E^eps[phi] - E[phi]|`` per radius, a log-log slope and an isotonic fit in ``eps``."""
    kind = get_kind(kind)
    if reference is None:
        reference = local_limit_loss(kind, emb, weights, quad).total
    rows = []
    for i, eps in enumerate(eps_list):
        rng = np.random.default_rng([seed, i])
        br = mc_continuous_loss(kind, emb, SamplingStrategy(tag, float(eps)), n, weights, rng)
        rows.append(TableRow(float(eps), br.total, br.stderr, reference, abs(br.total - reference)))
    order = np.argsort([r.param for r in rows])
    err = np.array([rows[i].abs_error for i in order])
    se = np.array([max(rows[i].stderr, 1e-300) for i in order])
    fit = isotonic_regression(err, weights=1.0 / se ** 2, increasing=True).x
    within = bool(np.all(np.abs(err - fit) <= 3.0 * se))
    slope = loglog_slope([rows[i].param for i in order], err)
    back = np.empty_like(fit)
    back[order] = fit
    return ConvergenceReport(rows, slope, back.tolist(), within)


@dataclass
class NormEquivalenceReport:
    c_min: float
    c_max: float
    c_min_sym: float
    c_max_sym: float
    volume: float

    @property
    def upper_bound(self) -> float:
        return math.sqrt(self.volume)


def verify_norm_equivalence(m: int, r0: float, kappa: float, trials: int, n_mc: int = 100_000,
                            rng: np.random.Generator | None = None) -> NormEquivalenceReport:
    """Ranges of ``|W|_av / |W|`` and ``|A|_av / |A|_F`` over random unit ``W`` and symmetric ``A``.

    The averaging set is the unit double cone ``|w| < 1, |w.e1| >= cos(kappa) |w|``.
    """
    if r0 <= 0:
        raise ValueError("r0 must be positive")
    if not (kappa > 1e-6):
        raise DegenerateConeError("cone angle kappa must be positive")
    if kappa > math.pi:
        raise ValueError("kappa must not exceed pi")
    rng = rng if rng is not None else np.random.default_rng(0)
    vol_ball = math.pi ** (m / 2) / math.gamma(m / 2 + 1)
    # the integrands only see w / |w|, and membership in the cone is radial
    g = rng.standard_normal((n_mc, m))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    inside = np.abs(g[:, 0]) >= math.cos(kappa) - 1e-15 if kappa < math.pi / 2 else np.ones(n_mc, bool)
    wbar = g[inside]
    wt = vol_ball / n_mc
    volume = wt * len(wbar)
    if len(wbar) == 0:
        raise DegenerateConeError("no Monte Carlo point fell inside the cone")
    M = wt * wbar.T @ wbar
    W = rng.standard_normal((trials, m))
    W /= np.linalg.norm(W, axis=1, keepdims=True)
    ratio = np.sqrt(np.einsum("ti,ij,tj->t", W, M, W))
    A = rng.standard_normal((trials, m, m))
    A = 0.5 * (A + A.transpose(0, 2, 1))
    A /= np.linalg.norm(A, axis=(1, 2), keepdims=True)
    # |A|_av^2 = sum_abcd A_ab A_cd T_abcd with T the fourth moment of wbar
    T = wt * np.einsum("ka,kb,kc,kd->abcd", wbar, wbar, wbar, wbar)
    ratio_sym = np.sqrt(np.einsum("tab,abcd,tcd->t", A, T, A))
    return NormEquivalenceReport(float(ratio.min()), float(ratio.max()),
                                 float(ratio_sym.min()), float(ratio_sym.max()), volume)
