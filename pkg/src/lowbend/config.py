"""Experiment configuration as flat ``section.key=value`` text.

Blank lines and lines starting with ``#`` are ignored.  Lists are comma
separated.  ``format_config`` writes every field, and ``parse_config`` of that
text returns an equal object.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields, is_dataclass, replace

from .errors import ConfigError


@dataclass
class StrategyConfig:
    tag: str = "S1"
    epsilon: float = math.pi / 8
    min_dist: float = 0.0


@dataclass
class WeightsConfig:
    lam: float = 1.0
    c: float = 1.0
    kappa_rec: float = 0.0


@dataclass
class NetworkConfig:
    hidden: tuple[int, ...] = (256, 256, 128)
    latent: int = 16
    activation: str = "softplus"


@dataclass
class TrainingConfig:
    epochs: int = 100
    epoch_size: int = 10000
    batch: int = 128
    mode: str = "encoder-only"
    early_stop_patience: int = 10
    decoder_epochs: int = -1
    test_size: int = 2000
    lr: float = 1e-4
    weight_decay: float = 1e-5


@dataclass
class DataConfig:
    renderer: str = "none"
    resolution: int = 16
    ellipse_mode: str = "smooth"
    ellipse_k: float = 3.0
    count: int = 1000


@dataclass
class EvalConfig:
    pca: bool = True
    interpolation: bool = True
    self_intersection: bool = True
    scatter: bool = True
    n_points: int = 4000
    n_pairs: int = 2000
    grid: int = 16
    deltas: tuple[float, ...] = ()


@dataclass
class VerifyConfig:
    embedding: str = "fixture"
    taylor_radii: tuple[float, ...] = (0.4, 0.2, 0.1, 0.05)
    taylor_samples: int = 1000
    volume_eps: tuple[float, ...] = (0.4, 0.2, 0.1, 0.05)
    convergence_eps: tuple[float, ...] = (0.4, 0.2, 0.1, 0.05)
    convergence_samples: int = 100000
    norm_kappa: float = math.pi / 4
    norm_trials: int = 1000
    mc_sizes: tuple[int, ...] = (100, 1000, 10000, 100000)


@dataclass
class ExperimentConfig:
    kind: str = "hemisphere"
    seed: int = 0
    output: str = "run"
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    weights: WeightsConfig = field(default_factory=WeightsConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    return str(value)


def _flatten(obj, prefix=""):
    for f in fields(obj):
        v = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if is_dataclass(v):
            yield from _flatten(v, key + ".")
        else:
            yield key, f, v


def format_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{k}={_fmt(v)}\n" for k, _, v in _flatten(cfg))


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the formatted config; the output directory is excluded."""
    return hashlib.sha256(format_config(replace(cfg, output="")).encode("utf-8")).hexdigest()


def _convert(text: str, type_name: str, line: int):
    text = text.strip()
    try:
        if type_name == "bool":
            low = text.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if type_name == "int":
            return int(text)
        if type_name == "float":
            v = float(text)
            if not math.isfinite(v):
                raise ValueError(text)
            return v
        if type_name.startswith("tuple[int"):
            return tuple(int(t) for t in text.split(",") if t.strip())
        if type_name.startswith("tuple[float"):
            return tuple(float(t) for t in text.split(",") if t.strip())
        return text
    except ValueError:
        raise ConfigError(f"cannot read {text!r} as {type_name}", line) from None


def parse_config(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    known = {k: f for k, f, _ in _flatten(cfg)}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, got {line!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        seen.add(key)
        v = _convert(value, str(known[key].type), lineno)
        _set(cfg, key, v)
    _validate(cfg)
    return cfg


def _set(cfg, dotted: str, value) -> None:
    parts = dotted.split(".")
    obj = cfg
    for p in parts[:-1]:
        obj = getattr(obj, p)
    setattr(obj, parts[-1], value)


def _validate(cfg: ExperimentConfig) -> None:
    from .geometry import KINDS, get_kind
    from .sampling import STRATEGIES
    from .training import MODES

    try:
        get_kind(cfg.kind)
    except Exception:
        raise ConfigError(f"unknown kind {cfg.kind!r}; choose from {sorted(KINDS)}") from None
    if cfg.strategy.tag not in STRATEGIES:
        raise ConfigError(f"strategy.tag must be one of {STRATEGIES}")
    if cfg.training.mode not in MODES:
        raise ConfigError(f"training.mode must be one of {MODES}")
    if cfg.network.activation not in ("softplus", "tanh"):
        raise ConfigError("network.activation must be softplus or tanh")
    if cfg.data.renderer not in ("none", "sundial", "ellipse", "splat"):
        raise ConfigError("data.renderer must be none, sundial, ellipse or splat")
    if cfg.verify.embedding not in ("fixture", "linear"):
        raise ConfigError("verify.embedding must be fixture or linear")
    if cfg.seed < 0:
        raise ConfigError("seed must be nonnegative")


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def with_overrides(cfg: ExperimentConfig, seed: int | None = None, output: str | None = None) -> ExperimentConfig:
    out = replace(cfg)
    if seed is not None:
        out.seed = seed
    if output is not None:
        out.output = output
    return out
