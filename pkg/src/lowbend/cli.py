"""Command line entry point: ``lowbend {gen-data,train,eval,verify}``.

Every command writes into the run directory (``--out`` or ``output`` in the
config) together with ``manifest-<command>.txt`` recording the config hash, seed and
library versions.  Failures print a JSON error record to stderr, also saved
as ``error.json``, and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import platform
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ExperimentConfig, config_hash, format_config, load_config, with_overrides
from .datasets import EllipseRenderer, SplatRenderer, SundialRenderer, build_dataset, sample_renderable_triples
from .errors import ConfigError, LowBendError
from .evaluation import (compose, distance_scatter, dims_for_threshold, interpolation_error, pca,
                         self_intersection_field, tail_variance_mass, write_err_csv, write_pca_csv,
                         write_scatter_csv, write_self_intersection_csv)
from .geometry import get_kind
from .limit import (FIXTURES, QuadratureRule, flat_linear, local_limit_loss, loglog_slope, TableRow,
                    verify_epsilon_convergence, verify_norm_equivalence, verify_taylor,
                    verify_volume_expansion, write_table)
from .loss import LossWeights, discrete_loss, mc_continuous_loss
from .network import init_kaiming, load_net, save_net
from .rng import stream
from .sampling import SamplingStrategy, sample_uniform_pairs
from .training import LOG_COLUMNS, TrainSettings, train

EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3


# ---------------------------------------------------------------------------
# Building blocks from a config
# ---------------------------------------------------------------------------


def make_strategy(cfg: ExperimentConfig) -> SamplingStrategy:
    return SamplingStrategy(cfg.strategy.tag, cfg.strategy.epsilon, cfg.strategy.min_dist)


def make_weights(cfg: ExperimentConfig) -> LossWeights:
    return LossWeights(cfg.weights.lam, cfg.weights.c, cfg.weights.kappa_rec)


def make_renderer(cfg: ExperimentConfig):
    d = cfg.data
    if d.renderer == "none":
        return None
    if d.renderer == "sundial":
        return SundialRenderer(resolution=d.resolution)
    if d.renderer == "ellipse":
        return EllipseRenderer(resolution=d.resolution, mode=d.ellipse_mode, k=d.ellipse_k)
    return SplatRenderer(resolution=d.resolution)


def input_width(cfg: ExperimentConfig, renderer) -> int:
    if renderer is None:
        return get_kind(cfg.kind).n_coords
    return int(np.prod(renderer.shape))


def encoder_widths(cfg, d_in):
    return [d_in, *cfg.network.hidden, cfg.network.latent]


def decoder_widths(cfg, d_in):
    return [cfg.network.latent, *reversed(cfg.network.hidden), d_in]


def train_settings(cfg: ExperimentConfig) -> TrainSettings:
    t = cfg.training
    return TrainSettings(
        epochs=t.epochs, epoch_size=t.epoch_size, batch=t.batch, mode=t.mode,
        early_stop_patience=t.early_stop_patience,
        decoder_epochs=None if t.decoder_epochs < 0 else t.decoder_epochs,
        test_size=t.test_size, lr=t.lr, weight_decay=t.weight_decay,
    )


def _thread_limit():
    n = os.environ.get("LOWBEND_THREADS")
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(n))


def write_run_manifest(out: Path, cfg: ExperimentConfig, command: str, extra: dict | None = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(cfg))
    entries = {
        "command": command,
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "lowbend_version": __version__,
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        "python_version": platform.python_version(),
    }
    entries.update(extra or {})
    (out / f"manifest-{command}.txt").write_text("".join(f"{k}={v}\n" for k, v in entries.items()))


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(r[h])) if isinstance(r[h], float) else r[h] for h in header])


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_data(cfg: ExperimentConfig, out: Path) -> Path:
    kind = get_kind(cfg.kind)
    data_dir = build_dataset(out / "data", kind, make_strategy(cfg), cfg.data.count, cfg.seed, make_renderer(cfg))
    write_run_manifest(out, cfg, "gen-data", {"dataset": "data"})
    return data_dir


def cmd_train(cfg: ExperimentConfig, out: Path) -> dict:
    kind = get_kind(cfg.kind)
    renderer = make_renderer(cfg)
    strategy = make_strategy(cfg)
    d_in = input_width(cfg, renderer)
    enc = init_kaiming(encoder_widths(cfg, d_in), cfg.network.activation, stream(cfg.seed, "init/encoder"))
    dec = None
    if cfg.training.mode != "encoder-only":
        dec = init_kaiming(decoder_widths(cfg, d_in), cfg.network.activation, stream(cfg.seed, "init/decoder"))
    result = train(kind, strategy, make_weights(cfg), enc, train_settings(cfg), cfg.seed,
                   decoder=dec, renderer=renderer)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"seed": cfg.seed, "config_hash": config_hash(cfg), "epoch": result.best_epoch}
    save_net(out / "encoder.net", result.encoder, meta)
    if dec is not None:
        save_net(out / "decoder.net", dec, meta)
    _write_rows(out / "train_log.csv", LOG_COLUMNS, result.log)
    write_run_manifest(out, cfg, "train", {"best_epoch": result.best_epoch,
                                            "stopped_epoch": result.stopped_epoch})
    return {"best_epoch": result.best_epoch, "stopped_epoch": result.stopped_epoch}


def cmd_eval(cfg: ExperimentConfig, out: Path, checkpoint: Path | None = None) -> dict:
    kind = get_kind(cfg.kind)
    renderer = make_renderer(cfg)
    ckpt = Path(checkpoint) if checkpoint else out / "encoder.net"
    if not ckpt.exists():
        raise FileNotFoundError(f"checkpoint {ckpt} not found")
    enc = load_net(ckpt)
    dec_path = ckpt.with_name("decoder.net")
    dec = load_net(dec_path) if dec_path.exists() else None
    encode = compose(enc, renderer)
    render = (lambda p: np.asarray(p, dtype=float)) if renderer is None else renderer
    out.mkdir(parents=True, exist_ok=True)
    e = cfg.eval
    metrics = {}

    pts = kind.sample_uniform(stream(cfg.seed, "eval/points"), e.n_points)
    if renderer is not None:
        pts = pts[renderer.domain_ok(pts)]
    codes = encode(pts)
    result = pca(codes)
    write_pca_csv(out / "pca_variance.csv", result)
    metrics["dims_99"] = dims_for_threshold(result, 0.99)
    metrics["tail_mass_3"] = tail_variance_mass(result, 2)

    x, y = sample_uniform_pairs(kind, e.n_pairs, stream(cfg.seed, "eval/pairs"))
    if renderer is not None:
        ok = renderer.domain_ok(x) & renderer.domain_ok(y)
        x, y = x[ok], y[ok]
    write_scatter_csv(out / "scatter.csv", distance_scatter(kind, encode, x, y))

    deltas = e.deltas or tuple(kind.diameter * k / 8 for k in range(1, 9))
    if dec is not None:
        rows = interpolation_error(kind, encode, dec, render, x, y, deltas)
        write_err_csv(out / "err_by_delta.csv", rows)
        metrics["err_sq_diameter"] = rows[-1].err_sq
    else:
        write_err_csv(out / "err_by_delta.csv", [])

    domain = None if renderer is None else renderer.domain_ok
    grid_pts, field = self_intersection_field(kind, encode, result, max(16, e.grid), domain=domain)
    write_self_intersection_csv(out / "self_intersection.csv", grid_pts, field)
    metrics["self_intersection_min"] = float(field.min())

    test = sample_renderable_triples(kind, make_strategy(cfg), cfg.training.test_size,
                                     stream(cfg.seed, "test-set"), renderer)
    br = discrete_loss(test, enc, make_weights(cfg))
    metrics.update({"test_isometry": br.isometry, "test_bending": br.bending, "test_total": br.total})
    (out / "metrics.txt").write_text("".join(f"{k}={_num(v)}\n" for k, v in metrics.items()))
    write_run_manifest(out, cfg, "eval", {"checkpoint": str(ckpt)})
    return metrics


def _num(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def cmd_verify(cfg: ExperimentConfig, out: Path) -> dict:
    kind = get_kind(cfg.kind)
    v = cfg.verify
    weights = make_weights(cfg)
    if v.embedding == "linear":
        emb = flat_linear(kind, rng=stream(cfg.seed, "verify/linear"))
    else:
        emb = FIXTURES[kind.name]()
    out.mkdir(parents=True, exist_ok=True)
    report = {}

    tay = verify_taylor(kind, emb, v.taylor_radii, v.taylor_samples, stream(cfg.seed, "verify/taylor"))
    write_table(out / "taylor_first.csv", tay.rows(1), "r")
    write_table(out / "taylor_second.csv", tay.rows(2), "r")
    report.update(taylor_within_bounds=tay.within_bounds, taylor_first_slope=tay.first_slope,
                  taylor_second_slope=tay.second_slope)

    vol = verify_volume_expansion(kind, v.volume_eps, rng=stream(cfg.seed, "verify/volume"))
    write_table(out / "volume.csv", vol.rows(), "eps")
    report["volume_slope"] = vol.slope

    ref = local_limit_loss(kind, emb, weights, QuadratureRule(), rng=stream(cfg.seed, "verify/outer"))
    report["limit_isometry"] = ref.isometry
    report["limit_bending"] = ref.bending
    conv = verify_epsilon_convergence(kind, emb, v.convergence_eps, weights, v.convergence_samples,
                                      cfg.strategy.tag, reference=ref.total, seed=cfg.seed)
    write_table(out / "convergence.csv", conv.rows, "eps")
    report.update(convergence_slope=conv.slope, convergence_within_fit=conv.within_fit)

    norm = verify_norm_equivalence(kind.dim, 1.0, v.norm_kappa, v.norm_trials,
                                   rng=stream(cfg.seed, "verify/norm"))
    with open(out / "norm_equivalence.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "c_min", "c_max", "upper_bound"])
        w.writerow(["vector", repr(norm.c_min), repr(norm.c_max), repr(norm.upper_bound)])
        w.writerow(["symmetric", repr(norm.c_min_sym), repr(norm.c_max_sym), repr(norm.upper_bound)])

    strategy = SamplingStrategy(cfg.strategy.tag, min(cfg.strategy.epsilon, kind.injectivity_bound))
    rows = []
    for i, n in enumerate(v.mc_sizes):
        br = mc_continuous_loss(kind, emb, strategy, n, weights, stream(cfg.seed, "verify/mc", i))
        rows.append(TableRow(n, br.total, br.stderr, ref.total, abs(br.total - ref.total)))
    write_table(out / "mc_rate.csv", rows, "N")
    report["mc_stderr_slope"] = loglog_slope([r.param for r in rows], [r.stderr for r in rows])

    (out / "report.txt").write_text("".join(f"{k}={_num(val)}\n" for k, val in report.items()))
    write_run_manifest(out, cfg, "verify")
    return report


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lowbend", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="key=value experiment config (default: <out>/config.txt, then built-in defaults)")
        s.add_argument("--out", type=Path, help="run directory (overrides config output)")
        s.add_argument("--seed", type=int, help="root seed (overrides config seed)")
        if name == "eval":
            s.add_argument("--checkpoint", type=Path, help="encoder checkpoint (default: <out>/encoder.net)")
    return p


def _initial_config(path, out) -> ExperimentConfig:
    """Explicit ``--config``, else the ``config.txt`` saved in the run directory, else defaults."""
    if path is not None:
        return load_config(path)
    if out is not None and (Path(out) / "config.txt").exists():
        return load_config(Path(out) / "config.txt")
    return ExperimentConfig()


def _error_record(exc: BaseException, code: str, line=None) -> dict:
    rec = {"error": code, "type": type(exc).__name__, "message": str(exc)}
    if line is not None:
        rec["line"] = line
    return rec


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = args.out
    try:
        cfg = _initial_config(args.config, out)
        cfg = with_overrides(cfg, args.seed, str(out) if out else None)
        out = Path(cfg.output)
        with _thread_limit():
            if args.command == "eval":
                result = cmd_eval(cfg, out, args.checkpoint)
            else:
                result = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        return _fail(out, _error_record(exc, exc.code, exc.line), EXIT_CONFIG)
    except FileNotFoundError as exc:
        return _fail(out, _error_record(exc, "missing-file"), EXIT_MISSING)
    except LowBendError as exc:
        return _fail(out, _error_record(exc, exc.code), EXIT_FAILURE)
    except (ValueError, OSError) as exc:
        return _fail(out, _error_record(exc, "error"), EXIT_FAILURE)
    if isinstance(result, dict):
        print(json.dumps({k: (_num(v) if isinstance(v, float) else v) for k, v in result.items()}))
    return 0


def _fail(out, record: dict, code: int) -> int:
    text = json.dumps(record)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            (Path(out) / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return code


if __name__ == "__main__":
    sys.exit(main())
