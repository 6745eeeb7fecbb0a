"""Minibatch training of encoder (and optional decoder) networks on the sampling loss.

Each simulated epoch draws ``epoch_size`` fresh triples from the sampling
strategy and walks them in batches (the last batch may be short).  After each
epoch the loss is evaluated on a fixed test set; early stopping keeps the
weights with the best monitored test value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .datasets import sample_renderable_triples
from .errors import DimensionMismatchError, TrainingDivergenceError
from .geometry import Manifold, get_kind
from .loss import LossWeights, discrete_loss, loss_and_cotangents, reconstruction_loss, rms_sq
from .network import AdamState, EncoderNet, adam_step, backward, forward
from .rng import stream
from .sampling import SamplingStrategy, Triples

MODES = ("encoder-only", "joint", "decoder-after")

LOG_COLUMNS = (
    "epoch", "phase", "isometry", "bending", "reconstruction", "total",
    "test_isometry", "test_bending", "test_reconstruction", "test_total",
)


@dataclass
class TrainSettings:
    epochs: int = 100
    epoch_size: int = 10000
    batch: int = 128
    mode: str = "encoder-only"
    early_stop_patience: int = 10
    decoder_epochs: int | None = None
    test_size: int = 2000
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 1e-5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.batch <= 0 or self.epoch_size <= 0 or self.epochs < 0:
            raise ValueError("batch and epoch_size must be positive, epochs nonnegative")

    def adam(self, net: EncoderNet) -> AdamState:
        return AdamState.for_net(net, lr=self.lr, beta1=self.beta1, beta2=self.beta2,
                                 eps=self.adam_eps, weight_decay=self.weight_decay)

    def batches(self) -> list[tuple[int, int]]:
        return [(s, min(s + self.batch, self.epoch_size)) for s in range(0, self.epoch_size, self.batch)]


@dataclass
class TripleSource:
    """Fresh triples per epoch from a strategy, rendered when a renderer is given.

    Pairs with an endpoint outside the renderer's drawable region are redrawn.
    """

    kind: Manifold
    strategy: SamplingStrategy
    renderer: Callable[[np.ndarray], np.ndarray] | None = None

    def draw(self, n: int, rng: np.random.Generator) -> Triples:
        return sample_renderable_triples(self.kind, self.strategy, n, rng, self.renderer)


@dataclass
class TrainResult:
    encoder: EncoderNet
    decoder: EncoderNet | None
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0

    def column(self, name: str, phase: str | None = None) -> np.ndarray:
        rows = [r for r in self.log if r["epoch"] > 0 and (phase is None or r["phase"] == phase)]
        return np.array([r[name] for r in rows], dtype=float)


def _stack_inputs(t: Triples) -> np.ndarray:
    return np.concatenate([t.inputs("x"), t.inputs("y"), t.inputs("mid")])


def _check_finite(*vals):
    if not all(math.isfinite(v) for v in vals):
        raise TrainingDivergenceError("loss became nonfinite")


def _encoder_grads(enc, dec, t: Triples, weights: LossWeights, joint: bool):
    n = len(t)
    out, cache = forward(enc, _stack_inputs(t))
    a, b, m = out[:n], out[n:2 * n], out[2 * n:]
    br, (gx, gy, gm) = loss_and_cotangents(a, b, m, t.dist, weights)
    rec = 0.0
    dec_grads = None
    if joint:
        target = np.concatenate([t.inputs("x"), t.inputs("y")])
        rec, g_codes, dec_grads = _decoder_grads(dec, np.concatenate([a, b]), target)
        gx = gx + weights.kappa_rec * g_codes[:n]
        gy = gy + weights.kappa_rec * g_codes[n:]
        dec_grads = [weights.kappa_rec * g for g in dec_grads]
    grads, _ = backward(enc, cache, np.concatenate([gx, gy, gm]))
    _check_finite(br.isometry, br.bending, rec)
    return br.isometry, br.bending, rec, grads, dec_grads


def _decoder_grads(dec, codes, target):
    """Reconstruction loss of a stacked x/y batch with grads for decoder params and codes."""
    out, cache = forward(dec, codes)
    if out.shape != target.shape:
        raise DimensionMismatchError(f"decoder output {out.shape} vs target {target.shape}")
    diff = out - target
    rows = len(diff)
    rec = float(np.sum(rms_sq(diff)) / rows)
    g_out = 2.0 * diff / (rows * diff.shape[1])
    grads, g_codes = backward(dec, cache, g_out)
    return rec, g_codes, grads


def evaluate(enc, dec, t: Triples, weights: LossWeights) -> dict:
    br = discrete_loss(t, enc, weights)
    rec = reconstruction_loss(t, enc, dec) if dec is not None else 0.0
    return {"test_isometry": br.isometry, "test_bending": br.bending, "test_reconstruction": rec,
            "test_total": br.isometry + weights.lam * br.bending + weights.kappa_rec * rec}


def _run_phase(phase, epochs, settings, source, test, weights, enc, dec, seed, start_epoch, log):
    joint = phase == "joint"
    enc_opt = settings.adam(enc) if phase in ("encoder", "joint") else None
    dec_opt = settings.adam(dec) if phase in ("decoder", "joint") else None
    monitor = {"encoder": lambda r: r["test_isometry"] + weights.lam * r["test_bending"],
               "joint": lambda r: r["test_total"],
               "decoder": lambda r: r["test_reconstruction"]}[phase]
    best = math.inf
    best_state = (enc.copy(), None if dec is None else dec.copy())
    best_epoch = start_epoch
    epoch = start_epoch
    for k in range(epochs):
        epoch = start_epoch + k + 1
        rng = stream(seed, f"train/{phase}", epoch)
        data = source.draw(settings.epoch_size, rng)
        sums = np.zeros(3)
        for lo, hi in settings.batches():
            t = data.subset(slice(lo, hi))
            if phase == "decoder":
                codes = enc(np.concatenate([t.inputs("x"), t.inputs("y")]))
                target = np.concatenate([t.inputs("x"), t.inputs("y")])
                rec, _, dgrads = _decoder_grads(dec, codes, target)
                _check_finite(rec)
                adam_step(dec_opt, dec, dgrads)
                sums += np.array([0.0, 0.0, rec]) * (hi - lo)
                continue
            iso, bend, rec, grads, dgrads = _encoder_grads(enc, dec, t, weights, joint)
            adam_step(enc_opt, enc, grads)
            if joint:
                adam_step(dec_opt, dec, dgrads)
            sums += np.array([iso, bend, rec]) * (hi - lo)
        iso, bend, rec = sums / settings.epoch_size
        if phase == "decoder":
            # the encoder is frozen: report its (constant) test-set terms
            br = discrete_loss(test, enc, weights)
            iso, bend = br.isometry, br.bending
        row = {"epoch": epoch, "phase": phase, "isometry": iso, "bending": bend, "reconstruction": rec,
               "total": iso + weights.lam * bend + weights.kappa_rec * rec}
        row.update(evaluate(enc, dec, test, weights))
        log.append(row)
        score = monitor(row)
        if score < best:
            best, best_epoch = score, epoch
            best_state = (enc.copy(), None if dec is None else dec.copy())
        elif settings.early_stop_patience and epoch - best_epoch >= settings.early_stop_patience:
            break
    return best_state, best_epoch, epoch


def _restore(net, saved):
    if net is None or saved is None:
        return
    for p, q in zip(net.params(), saved.params()):
        p[...] = q


def train(kind, strategy: SamplingStrategy, weights: LossWeights, encoder: EncoderNet,
          settings: TrainSettings, seed: int, decoder: EncoderNet | None = None,
          renderer=None, test: Triples | None = None, source=None) -> TrainResult:
    """Train ``encoder`` (and ``decoder``) in place; returns the nets with the best test score."""
    kind = get_kind(kind)
    strategy.check(kind)
    if settings.mode != "encoder-only" and decoder is None:
        raise ValueError(f"mode {settings.mode} needs a decoder")
    source = source or TripleSource(kind, strategy, renderer)
    if test is None:
        test = source.draw(settings.test_size, stream(seed, "test-set"))
    d_in = test.inputs("x").shape[1]
    if encoder.d_in != d_in:
        raise DimensionMismatchError(f"encoder expects {encoder.d_in} inputs, data has {d_in}")
    if decoder is not None and (decoder.d_in != encoder.d_out or decoder.d_out != d_in):
        raise DimensionMismatchError("decoder widths do not match encoder code size and data size")
    dec = decoder if settings.mode != "encoder-only" else None
    log = [{"epoch": 0, "phase": "init", "isometry": math.nan, "bending": math.nan,
            "reconstruction": math.nan, "total": math.nan, **evaluate(encoder, dec, test, weights)}]
    phase = "joint" if settings.mode == "joint" else "encoder"
    (best_enc, best_dec), best_epoch, stopped = _run_phase(
        phase, settings.epochs, settings, source, test, weights, encoder, dec, seed, 0, log)
    _restore(encoder, best_enc)
    _restore(dec, best_dec)
    if settings.mode == "decoder-after":
        n_dec = settings.decoder_epochs if settings.decoder_epochs is not None else settings.epochs
        (_, best_dec), best_epoch, stopped = _run_phase(
            "decoder", n_dec, settings, source, test, weights, encoder, decoder, seed, stopped, log)
        _restore(decoder, best_dec)
    return TrainResult(encoder, decoder, log, best_epoch, stopped)


def smoothed_monotone_fraction(values, window: int = 10) -> float:
    """Fraction of nonincreasing transitions of the trailing ``window``-epoch moving average."""
    v = np.asarray(values, dtype=float)
    if len(v) < window + 1:
        return 1.0
    avg = np.convolve(v, np.ones(window) / window, mode="valid")
    steps = np.diff(avg)
    return float(np.mean(steps <= 0.0))
