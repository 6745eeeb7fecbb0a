"""Image renderers for the explicit manifolds and on-disk triple datasets.

A dataset directory holds three files:

``manifest.txt``
    ``key=value`` lines: kind, strategy, epsilon, min_dist, seed, count,
    renderer settings, payload shape and the field layout of the other files.
``triples.csv``
    one row per record: index, x coords, y coords, midpoint coords, distance,
    payload index (``-1`` without images).
``payloads.bin``
    for each record with a payload, the x, y and midpoint images in that
    order, as little-endian float64, row-major.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import BoundaryRenderError, KindMismatchError, SamplingStarvationError
from .geometry import get_kind, quat_to_matrix
from .rng import stream
from .sampling import (PAYLOAD_KEYS, SamplingStrategy, Triples, make_triples, read_triples, sample_pairs,
                       triple_header, write_triples)


def _symmetric_grid(res: int, half_width: float) -> np.ndarray:
    # integer numerators keep the grid exactly antisymmetric, so 90 degree
    # rotations of the window permute pixels without resampling
    return half_width * (2.0 * np.arange(res) - (res - 1)) / (res - 1)


def _check_res(res: int) -> None:
    if res < 8:
        raise ValueError("resolution must be at least 8")


@dataclass(frozen=True)
class SundialRenderer:
    """Gaussian shadow of a vertical rod (foot at the origin, tip at ``rod_height``).

    Light arrives from direction ``p``; the ray through the rod tip meets the
    ground at ``y = -rod_height * p[:2] / p[2]``.  The shadow is a Gaussian
    centered at ``y / 2`` with covariance ``y y^T + sigma_perp^2 I``.
    """

    resolution: int = 16
    window: float = 2.0
    rod_height: float = 1.0
    sigma_perp: float = 0.05
    collar: float = math.sin(0.01)

    kind_name = "hemisphere"
    channels = 1

    def __post_init__(self):
        _check_res(self.resolution)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.resolution, self.resolution)

    def domain_ok(self, p) -> np.ndarray:
        return np.asarray(p, dtype=float)[..., 2] >= self.collar

    def shadow_tip(self, p) -> np.ndarray:
        p = np.atleast_2d(np.asarray(p, dtype=float))
        if np.any(p[:, 2] <= 0.0):
            raise BoundaryRenderError("light on the horizon casts a shadow at infinity")
        return -self.rod_height * p[:, :2] / p[:, 2:3]

    def __call__(self, p) -> np.ndarray:
        y = self.shadow_tip(p)
        g = _symmetric_grid(self.resolution, self.window)
        X, Y = np.meshgrid(g, g, indexing="xy")  # row index walks Y, column index walks X
        dx = X[None] - 0.5 * y[:, 0, None, None]
        dy = Y[None] - 0.5 * y[:, 1, None, None]
        s2 = self.sigma_perp ** 2
        # Sigma = y y^T + s2 I, inverse by Sherman-Morrison
        ny2 = np.sum(y * y, axis=1)[:, None, None]
        proj = dx * y[:, 0, None, None] + dy * y[:, 1, None, None]
        quad = (dx * dx + dy * dy) / s2 - proj * proj / (s2 * (s2 + ny2))
        return np.exp(-0.5 * quad)

    def settings(self) -> dict:
        return {"name": "sundial", **asdict(self)}


@dataclass(frozen=True)
class EllipseRenderer:
    """Ellipse ``(x - y)^T A(theta)^-1 (x - y) <= 1`` on a grid over ``[-1, 1]^2``.

    ``A(theta) = (I + 2 u u^T) / 10`` with ``u = (cos theta, sin theta)``.
    """

    resolution: int = 16
    mode: str = "smooth"
    k: float = 3.0

    kind_name = "ellipse"
    channels = 1

    def __post_init__(self):
        _check_res(self.resolution)
        if self.mode not in ("binary", "smooth"):
            raise ValueError("mode must be 'binary' or 'smooth'")
        if self.mode == "smooth" and not self.k > 0:
            raise ValueError("smoothing sharpness k must be positive")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.resolution, self.resolution)

    def domain_ok(self, q) -> np.ndarray:
        return np.ones(np.asarray(q).shape[:-1], dtype=bool)

    def quadratic_form(self, q) -> np.ndarray:
        q = np.atleast_2d(np.asarray(q, dtype=float))
        g = np.linspace(-1.0, 1.0, self.resolution)
        X, Y = np.meshgrid(g, g, indexing="xy")
        dx = X[None] - q[:, 1, None, None]
        dy = Y[None] - q[:, 2, None, None]
        c = np.cos(q[:, 0])[:, None, None]
        s = np.sin(q[:, 0])[:, None, None]
        along = dx * c + dy * s
        # A^-1 = 10 (I - 2/3 u u^T)
        return 10.0 * (dx * dx + dy * dy - (2.0 / 3.0) * along * along)

    def __call__(self, q) -> np.ndarray:
        f = self.quadratic_form(q)
        if self.mode == "binary":
            return (f <= 1.0).astype(float)
        return expit(self.k * (1.0 - f))

    def settings(self) -> dict:
        return {"name": "ellipse", **asdict(self)}


def load_cloud(name: str = "splat_cloud.txt") -> tuple[np.ndarray, np.ndarray]:
    """Bundled asymmetric point cloud: columns ``x y z r g b``."""
    text = resources.files("lowbend").joinpath("assets").joinpath(name).read_text()
    data = np.loadtxt(text.splitlines())
    return data[:, :3], data[:, 3:6]


@dataclass(frozen=True)
class SplatRenderer:
    """Orthographic Gaussian-splat image of a rotated colored point cloud (3 channels).

    Splats are composited back to front with opacity ``exp(-r^2 / (2 sigma^2))``.
    """

    resolution: int = 16
    radius: float = 0.12
    window: float = 1.2
    asset: str = "splat_cloud.txt"
    _cloud: tuple = field(default=None, repr=False, compare=False)

    kind_name = "rotations"
    channels = 3

    def __post_init__(self):
        _check_res(self.resolution)
        if self._cloud is None:
            object.__setattr__(self, "_cloud", load_cloud(self.asset))

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.resolution, self.resolution, 3)

    def domain_ok(self, q) -> np.ndarray:
        return np.ones(np.asarray(q).shape[:-1], dtype=bool)

    def render_points(self, pts: np.ndarray) -> np.ndarray:
        """Render one already-rotated cloud ``(P, 3)``."""
        _, colors = self._cloud
        g = _symmetric_grid(self.resolution, self.window)
        X, Y = np.meshgrid(g, g, indexing="xy")
        img = np.zeros(self.shape)
        for i in np.argsort(pts[:, 2], kind="stable"):
            r2 = (X - pts[i, 0]) ** 2 + (Y - pts[i, 1]) ** 2
            a = np.exp(-0.5 * r2 / self.radius ** 2)[..., None]
            img = a * colors[i] + (1.0 - a) * img
        return img

    def __call__(self, q) -> np.ndarray:
        q = np.atleast_2d(np.asarray(q, dtype=float))
        pts, _ = self._cloud
        R = quat_to_matrix(q)
        return np.stack([self.render_points(pts @ R[i].T) for i in range(len(q))])

    def settings(self) -> dict:
        return {"name": "splat", "resolution": self.resolution, "radius": self.radius,
                "window": self.window, "asset": self.asset}


def render_sundial(p, rcfg: SundialRenderer | None = None) -> np.ndarray:
    return (rcfg or SundialRenderer())(np.asarray(p)[None])[0]


def render_ellipse(q, rcfg: EllipseRenderer | None = None) -> np.ndarray:
    return (rcfg or EllipseRenderer())(np.asarray(q)[None])[0]


def render_splat(q, rcfg: SplatRenderer | None = None) -> np.ndarray:
    return (rcfg or SplatRenderer())(np.asarray(q)[None])[0]


RENDERERS = {"sundial": SundialRenderer, "ellipse": EllipseRenderer, "splat": SplatRenderer}


def make_renderer(rcfg: dict):
    """Inverse of ``renderer.settings()``; string values (from a manifest) are coerced by field type."""
    rcfg = dict(rcfg)
    cls = RENDERERS[rcfg.pop("name")]
    casts = {"int": int, "float": float, "str": str}
    kwargs = {}
    for k, v in rcfg.items():
        f = cls.__dataclass_fields__.get(k)
        if f is None or k.startswith("_"):
            continue
        kwargs[k] = casts.get(str(f.type), str)(v)
    return cls(**kwargs)


def sample_renderable_triples(kind, strategy: SamplingStrategy, n: int, rng: np.random.Generator,
                              renderer=None, max_rounds: int = 1000) -> Triples:
    """Like ``sample_triples`` but rejects pairs whose endpoints the renderer cannot draw."""
    kind = get_kind(kind)
    if renderer is None:
        s = sample_pairs(kind, strategy, n, rng)
        return make_triples(kind, s.x, s.y)
    if renderer.kind_name != kind.name:
        raise KindMismatchError(f"{renderer.kind_name} renderer cannot draw {kind.name} points")
    xs, ys, have = [], [], 0
    for _ in range(max_rounds):
        if have >= n:
            break
        s = sample_pairs(kind, strategy, n - have, rng)
        ok = renderer.domain_ok(s.x) & renderer.domain_ok(s.y)
        xs.append(s.x[ok])
        ys.append(s.y[ok])
        have += int(ok.sum())
    else:
        raise SamplingStarvationError("renderer collar rejected too many pairs")
    x = np.concatenate(xs) if xs else np.zeros((0, kind.n_coords))
    y = np.concatenate(ys) if ys else np.zeros((0, kind.n_coords))
    if n == 0:
        return Triples(kind, x, y, x.copy(), np.zeros(0), None)
    return make_triples(kind, x, y, renderer)


# ---------------------------------------------------------------------------
# Dataset files
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def build_dataset(out_dir, kind, strategy: SamplingStrategy, count: int, seed: int,
                  renderer=None) -> Path:
    """Sample ``count`` triples (rendered if a renderer is given) and write a dataset directory."""
    kind = get_kind(kind)
    strategy.check(kind)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t = sample_renderable_triples(kind, strategy, count, stream(seed, "dataset"), renderer)
    manifest = {
        "format": "lowbend-dataset-1",
        "kind": kind.name,
        "strategy": strategy.tag,
        "epsilon": float(strategy.eps),
        "min_dist": float(strategy.min_dist),
        "seed": int(seed),
        "count": int(count),
        "triples_file": "triples.csv",
        "triples_columns": ",".join(triple_header(kind)),
        "payload_file": "payloads.bin" if renderer is not None else "",
        "payload_layout": "x,y,mid per record; float64 little-endian; row-major" if renderer is not None else "",
        "payload_shape": "x".join(str(s) for s in renderer.shape) if renderer is not None else "",
    }
    if renderer is not None:
        for k, v in renderer.settings().items():
            manifest[f"renderer.{k}"] = v
    (out / "manifest.txt").write_text("".join(f"{k}={_fmt(v)}\n" for k, v in manifest.items()))
    write_triples(out / "triples.csv", t, with_payload=renderer is not None)
    if renderer is not None:
        blob = np.stack([t.images[k] for k in PAYLOAD_KEYS], axis=1) if count else np.zeros(0)
        (out / "payloads.bin").write_bytes(np.ascontiguousarray(blob, dtype="<f8").tobytes())
    return out


def read_manifest(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            k, v = line.split("=", 1)
            out[k] = v
    return out


def load_dataset(path) -> tuple[Triples, dict]:
    d = Path(path)
    manifest = read_manifest(d / "manifest.txt")
    kind = get_kind(manifest["kind"])
    t, payload_idx = read_triples(d / manifest["triples_file"], kind)
    if manifest.get("payload_file"):
        shape = tuple(int(s) for s in manifest["payload_shape"].split("x"))
        raw = np.frombuffer((d / manifest["payload_file"]).read_bytes(), dtype="<f8")
        per = len(PAYLOAD_KEYS) * int(np.prod(shape))
        if raw.size != per * len(t):
            raise ValueError(f"{d}: payload size does not match record count")
        blob = raw.reshape((len(t), len(PAYLOAD_KEYS)) + shape)[payload_idx] if len(t) else raw.reshape(
            (0, len(PAYLOAD_KEYS)) + shape)
        t.images = {k: blob[:, i].copy() for i, k in enumerate(PAYLOAD_KEYS)}
    return t, manifest


def renderer_from_manifest(manifest: dict):
    rcfg = {k[len("renderer."):]: v for k, v in manifest.items() if k.startswith("renderer.")}
    return make_renderer(rcfg) if rcfg else None
