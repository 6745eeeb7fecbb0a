import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lowbend.errors import DimensionMismatchError, TrainingDivergenceError
from lowbend.network import (AdamState, EncoderNet, adam_step, backward, forward, gradient_check, init_kaiming,
                             load_net, read_meta, save_net)
from lowbend.rng import stream


def test_kaiming_std():
    net = init_kaiming([512, 512], rng=stream(0, "init"))
    target = math.sqrt(2.0 / (512 * (1 + 0.01 ** 2)))
    assert net.weights[0].std() == pytest.approx(target, rel=0.05)
    assert np.all(net.biases[0] == 0)


def test_init_is_deterministic():
    a = init_kaiming([3, 8, 4], rng=stream(5, "init/encoder"))
    b = init_kaiming([3, 8, 4], rng=stream(5, "init/encoder"))
    for p, q in zip(a.params(), b.params()):
        assert p.tobytes() == q.tobytes()


def test_identity_layer():
    net = EncoderNet([4, 4], [np.eye(4)], [np.zeros(4)])
    x = np.random.default_rng(0).standard_normal((3, 4))
    np.testing.assert_array_equal(net(x), x)
    np.testing.assert_array_equal(net(x[0]), x[0])


def test_output_layer_homogeneity():
    rng = np.random.default_rng(1)
    net = init_kaiming([3, 6, 5, 2], rng=rng)
    net.biases[-1][:] = 0.0
    x = rng.standard_normal((10, 3))
    y = net(x)
    net.weights[-1] *= 2.0
    np.testing.assert_allclose(net(x), 2.0 * y, rtol=1e-15)


@pytest.mark.parametrize("activation", ["softplus", "tanh"])
def test_backprop_matches_finite_differences(activation):
    rng = np.random.default_rng(2)
    net = init_kaiming([4, 7, 5, 3], activation, rng)
    x = rng.standard_normal((6, 4))
    r = rng.standard_normal((6, 3))
    assert gradient_check(net, x, r) <= 1e-5


def test_input_gradient():
    rng = np.random.default_rng(3)
    net = init_kaiming([3, 5, 2], rng=rng)
    x = rng.standard_normal((1, 3))
    _, cache = forward(net, x)
    _, gx = backward(net, cache, np.ones((1, 2)))
    h = 1e-6
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd = (net(x + e).sum() - net(x - e).sum()) / (2 * h)
        assert gx[0, j] == pytest.approx(fd, rel=1e-6)


def test_softplus_is_stable_for_large_inputs():
    net = EncoderNet([1, 1, 1], [np.array([[1.0]]), np.array([[1.0]])], [np.zeros(1), np.zeros(1)])
    out = net(np.array([[800.0], [-800.0]]))
    assert np.all(np.isfinite(out))
    assert out[0, 0] == pytest.approx(800.0)
    assert out[1, 0] == pytest.approx(0.0, abs=1e-300)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1e3), st.sampled_from([-1.0, 1.0]))
def test_first_adam_step(mag, sign):
    g = mag * sign
    net = EncoderNet([1, 1], [np.array([[0.5]])], [np.zeros(1)])
    state = AdamState.for_net(net, lr=1e-3, weight_decay=0.0)
    adam_step(state, net, [np.array([[g]]), np.zeros(1)])
    expected = 0.5 - 1e-3 * g / (abs(g) + 1e-8)
    assert net.weights[0][0, 0] == pytest.approx(expected, rel=1e-12)


def test_zero_gradient_no_decay_is_noop():
    net = init_kaiming([2, 3], rng=np.random.default_rng(0))
    before = [p.copy() for p in net.params()]
    state = AdamState.for_net(net, weight_decay=0.0)
    for _ in range(5):
        adam_step(state, net, [np.zeros_like(p) for p in net.params()])
    for p, q in zip(net.params(), before):
        np.testing.assert_array_equal(p, q)


def test_weight_decay_shrinks_monotonically():
    net = EncoderNet([1, 1], [np.array([[1.0]])], [np.array([-0.7])])
    state = AdamState.for_net(net, lr=1e-2, weight_decay=1e-3)
    prev = [abs(net.weights[0][0, 0]), abs(net.biases[0][0])]
    for _ in range(50):
        adam_step(state, net, [np.zeros((1, 1)), np.zeros(1)])
        now = [abs(net.weights[0][0, 0]), abs(net.biases[0][0])]
        assert now[0] < prev[0] and now[1] < prev[1]
        prev = now


def test_nonfinite_gradient_raises():
    net = init_kaiming([2, 2], rng=np.random.default_rng(0))
    with pytest.raises(TrainingDivergenceError):
        adam_step(AdamState.for_net(net), net, [np.full((2, 2), np.nan), np.zeros(2)])


def test_shape_checks():
    net = init_kaiming([3, 2], rng=np.random.default_rng(0))
    with pytest.raises(DimensionMismatchError):
        net(np.zeros((2, 4)))
    with pytest.raises(DimensionMismatchError):
        EncoderNet([3, 2], [np.zeros((2, 3))], [np.zeros(2)])


def test_checkpoint_roundtrip(tmp_path):
    net = init_kaiming([3, 9, 4], "tanh", np.random.default_rng(0))
    path = tmp_path / "enc.net"
    save_net(path, net, {"seed": 3, "epoch": 7})
    back = load_net(path)
    assert back.widths == net.widths and back.activation == "tanh"
    for p, q in zip(net.params(), back.params()):
        assert p.tobytes() == q.tobytes()
    assert read_meta(path) == {"epoch": "7", "seed": "3"}
    path.write_bytes(path.read_bytes() + b"x")
    with pytest.raises(ValueError):
        load_net(path)
