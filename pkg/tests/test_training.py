import math

import numpy as np
import pytest

from lowbend.datasets import EllipseRenderer
from lowbend.errors import DimensionMismatchError
from lowbend.loss import LossWeights
from lowbend.network import init_kaiming
from lowbend.rng import stream
from lowbend.sampling import SamplingStrategy
from lowbend.training import LOG_COLUMNS, TrainSettings, smoothed_monotone_fraction, train

SMALL = dict(epoch_size=512, batch=64, test_size=256)


def _klein_run(seed, epochs=6, **kw):
    enc = init_kaiming([2, 32, 32, 2], rng=stream(seed, "init/encoder"))
    settings = TrainSettings(epochs=epochs, early_stop_patience=0, lr=1e-3, **SMALL, **kw)
    return train("klein", SamplingStrategy("S1", 0.2), LossWeights(lam=0.0), enc, settings, seed)


def test_training_reduces_isometry_loss():
    finals, inits = [], []
    for seed in range(3):
        res = _klein_run(seed)
        inits.append(res.log[0]["test_isometry"])
        finals.append(res.log[-1]["test_isometry"])
    assert np.median(finals) < np.median(inits)


def test_training_is_deterministic():
    a, b = _klein_run(11, epochs=3), _klein_run(11, epochs=3)
    assert repr(a.log) == repr(b.log)  # repr keeps NaN rows comparable
    for p, q in zip(a.encoder.params(), b.encoder.params()):
        assert p.tobytes() == q.tobytes()


def test_log_layout_and_best_restore():
    res = _klein_run(1, epochs=4)
    assert [r["epoch"] for r in res.log] == [0, 1, 2, 3, 4]
    assert res.log[0]["phase"] == "init" and math.isnan(res.log[0]["isometry"])
    assert set(LOG_COLUMNS) <= set(res.log[1])
    best = min(res.log[1:], key=lambda r: r["test_isometry"])
    assert res.best_epoch == best["epoch"]


def test_early_stopping_triggers():
    enc = init_kaiming([2, 8, 2], rng=stream(0, "init/encoder"))
    # lr=0 never improves after the first epoch
    settings = TrainSettings(epochs=50, early_stop_patience=3, lr=0.0, weight_decay=0.0, **SMALL)
    res = train("klein", SamplingStrategy("S1", 0.2), LossWeights(), enc, settings, 0)
    assert res.stopped_epoch == 4 and res.best_epoch == 1


@pytest.mark.parametrize("mode", ["joint", "decoder-after"])
def test_modes_with_decoder(mode):
    r = EllipseRenderer(8)
    enc = init_kaiming([64, 16, 4], rng=stream(0, "init/encoder"))
    dec = init_kaiming([4, 16, 64], rng=stream(0, "init/decoder"))
    settings = TrainSettings(epochs=2, mode=mode, early_stop_patience=0, decoder_epochs=2, **SMALL)
    res = train("ellipse", SamplingStrategy("S1", 0.8), LossWeights(1.0, 1.0, 0.5), enc, settings, 0,
                decoder=dec, renderer=r)
    phases = [row["phase"] for row in res.log]
    if mode == "joint":
        assert phases == ["init", "joint", "joint"]
    else:
        assert phases == ["init", "encoder", "encoder", "decoder", "decoder"]
        dec_rows = [row for row in res.log if row["phase"] == "decoder"]
        # the encoder is frozen while the decoder trains
        assert dec_rows[0]["test_isometry"] == dec_rows[1]["test_isometry"]
    assert all(np.isfinite(row["test_reconstruction"]) for row in res.log)


def test_dimension_checks():
    enc = init_kaiming([3, 4], rng=stream(0, "e"))
    with pytest.raises(DimensionMismatchError):
        train("klein", SamplingStrategy("S1", 0.2), LossWeights(), enc, TrainSettings(epochs=1, **SMALL), 0)
    enc = init_kaiming([2, 4], rng=stream(0, "e"))
    with pytest.raises(ValueError):
        train("klein", SamplingStrategy("S1", 0.2), LossWeights(), enc,
              TrainSettings(epochs=1, mode="joint", **SMALL), 0)


def test_settings_validation_and_batches():
    with pytest.raises(ValueError):
        TrainSettings(mode="sideways")
    assert TrainSettings(epoch_size=300, batch=128).batches() == [(0, 128), (128, 256), (256, 300)]


def test_smoothed_monotone_fraction():
    assert smoothed_monotone_fraction(np.linspace(5, 1, 40)) == 1.0
    assert smoothed_monotone_fraction(np.linspace(1, 5, 40)) == 0.0
    assert smoothed_monotone_fraction([3.0, 2.0]) == 1.0
