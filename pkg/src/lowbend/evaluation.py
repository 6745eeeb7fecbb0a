"""Metrics on trained embeddings: PCA spectra, interpolation error, self-intersection, distance scatter.

Functions take ``encode(points) -> codes`` and ``decode(codes) -> payloads``
callables acting on manifold points in chart coordinates.  Renderers and
networks are composed by the caller (see :func:`compose`).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptySampleError
from .geometry import get_kind
from .loss import rms_sq


def compose(net, renderer=None):
    """``points -> net(renderer(points))`` flattened per point; identity renderer when ``None``."""
    if renderer is None:
        return lambda pts: net(np.asarray(pts, dtype=float))
    return lambda pts: net(renderer(pts).reshape(len(pts), -1))


@dataclass
class PcaResult:
    mean: np.ndarray
    components: np.ndarray  # rows are principal directions
    variances: np.ndarray
    explained: np.ndarray

    def project(self, codes, k: int | None = None) -> np.ndarray:
        comps = self.components if k is None else self.components[:k]
        return (np.asarray(codes, dtype=float) - self.mean) @ comps.T


def pca(codes) -> PcaResult:
    """Eigen-decomposition of the sample covariance, variances descending.

    Each component is signed so that its largest-magnitude entry is positive.
    A cloud without spread reports ``explained`` identically 1.
    """
    codes = np.asarray(codes, dtype=float)
    if codes.ndim != 2 or len(codes) < 2:
        raise EmptySampleError("pca needs at least two codes")
    mean = codes.mean(axis=0)
    centered = codes - mean
    cov = centered.T @ centered / (len(codes) - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals, kind="stable")[::-1]
    vals = np.clip(vals[order], 0.0, None)
    comps = vecs[:, order].T
    idx = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(len(comps)), idx])
    comps = comps * np.where(signs == 0, 1.0, signs)[:, None]
    total = vals.sum()
    explained = np.cumsum(vals) / total if total > 0 else np.ones_like(vals)
    if total > 0:
        explained[-1] = 1.0
    return PcaResult(mean, comps, vals, explained)


def dims_for_threshold(result: PcaResult, tau: float = 0.99) -> int:
    """Smallest ``k`` with ``explained[k-1] >= tau``; 0 for a cloud without spread."""
    if result.variances.sum() == 0.0:
        return 0
    return int(np.searchsorted(result.explained, tau - 1e-12) + 1)


def tail_variance_mass(result: PcaResult, keep: int = 2) -> float:
    """Fraction of variance outside the leading ``keep`` components."""
    total = result.variances.sum()
    return float(result.variances[keep:].sum() / total) if total > 0 else 0.0


@dataclass
class ErrRow:
    delta: float
    err_sq: float
    count: int
    empty: bool

    @property
    def signed_err(self) -> float:
        return math.copysign(math.sqrt(abs(self.err_sq)), self.err_sq)


def interpolation_terms(kind, encode, decode, render, x, y):
    """Per-pair ``(d, err_i^2, err_b^2)`` with the discrete rms norm on payloads."""
    kind = get_kind(kind)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    mid = kind.mean(x, y)
    d = kind.distance(x, y)
    truth = render(mid).reshape(len(mid), -1)
    lin = 0.5 * (encode(x) + encode(y))
    e_i = rms_sq(truth - decode(lin).reshape(len(mid), -1))
    e_b = rms_sq(truth - decode(encode(mid)).reshape(len(mid), -1))
    return d, e_i, e_b


def interpolation_error(kind, encode, decode, render, x, y, deltas) -> list[ErrRow]:
    """Signed ``err(delta)^2 = (1/|S'|) sum_{d <= delta} (err_i^2 - err_b^2)`` per delta."""
    d, e_i, e_b = interpolation_terms(kind, encode, decode, render, x, y)
    if len(d) == 0:
        raise EmptySampleError("no test pairs")
    diff = e_i - e_b
    rows = []
    for delta in deltas:
        sel = d <= delta
        k = int(sel.sum())
        rows.append(ErrRow(float(delta), float(diff[sel].sum() / len(d)) if k else 0.0, k, k == 0))
    return rows


def self_intersection_field(kind, encode, projection: PcaResult | None, n: int = 16,
                            dims: int = 3, chunk: int = 512, domain=None):
    """``min_{y: d(x,y) >= h} |phi_V(x) - phi_V(y)| / d(x,y)`` on the chart grid of spacing ``h``.

    ``projection=None`` uses the full code space.  ``domain(points) -> mask``
    drops grid points the encoder cannot see (e.g. outside a renderer's collar).
    Returns ``(grid points, values)``.
    """
    kind = get_kind(kind)
    if n < 16:
        raise ValueError("grid resolution must be at least 16 per dimension")
    pts, h = kind.chart_grid(n)
    if domain is not None:
        pts = pts[np.asarray(domain(pts), dtype=bool)]
    if len(pts) < 2:
        raise EmptySampleError("fewer than two grid points in the domain")
    codes = encode(pts)
    proj = codes if projection is None else projection.project(codes, dims)
    out = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        xs = pts[s:s + chunk]
        dm = kind.distance(xs[:, None, :], pts[None, :, :])
        dl = np.linalg.norm(proj[s:s + chunk, None, :] - proj[None, :, :], axis=-1)
        ratio = np.where(dm >= h * (1.0 - 1e-12), dl / np.where(dm > 0, dm, 1.0), np.inf)
        out[s:s + chunk] = ratio.min(axis=1)
    return pts, out


def distance_scatter(kind, encode, x, y) -> np.ndarray:
    """Rows ``(d_M(x, y), |phi(x) - phi(y)|)``; coincident pairs are dropped."""
    kind = get_kind(kind)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    d = kind.distance(x, y)
    lat = np.linalg.norm(encode(x) - encode(y), axis=1)
    keep = d > 0
    return np.column_stack([d[keep], lat[keep]])


# ---------------------------------------------------------------------------
# CSV outputs
# ---------------------------------------------------------------------------


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def write_pca_csv(path, result: PcaResult) -> None:
    _write(path, ["component", "variance", "explained"],
           [(i + 1, v, e) for i, (v, e) in enumerate(zip(result.variances, result.explained))])


def write_err_csv(path, rows: list[ErrRow]) -> None:
    _write(path, ["delta", "err_sq", "signed_err", "count", "empty"],
           [(r.delta, r.err_sq, r.signed_err, r.count, int(r.empty)) for r in rows])


def write_scatter_csv(path, rows: np.ndarray) -> None:
    _write(path, ["d_manifold", "d_latent"], [tuple(r) for r in rows])


def write_self_intersection_csv(path, pts: np.ndarray, values: np.ndarray) -> None:
    header = [f"coord_{i}" for i in range(pts.shape[1])] + ["value"]
    _write(path, header, [tuple(p) + (v,) for p, v in zip(pts, values)])
