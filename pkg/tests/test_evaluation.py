import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lowbend.errors import EmptySampleError
from lowbend.evaluation import (compose, dims_for_threshold, distance_scatter, interpolation_error,
                                interpolation_terms, pca, self_intersection_field, tail_variance_mass,
                                write_err_csv, write_pca_csv, write_scatter_csv, write_self_intersection_csv)
from lowbend.geometry import KINDS
from lowbend.limit import klein_trig
from lowbend.sampling import sample_uniform_pairs


def _plane_cloud(n=500, seed=0):
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((16, 2)))
    return rng.standard_normal((n, 2)) @ basis.T + rng.standard_normal(16)


def test_pca_plane_cloud():
    r = pca(_plane_cloud())
    assert r.explained[1] == pytest.approx(1.0, abs=1e-10)
    assert dims_for_threshold(r, 0.99) == 2
    assert tail_variance_mass(r, 2) < 1e-12


def test_pca_isotropic_cloud():
    codes = np.random.default_rng(1).standard_normal((10**5, 5))
    v = pca(codes).variances
    assert v.max() / v.min() <= 1.05


def test_pca_constant_cloud():
    r = pca(np.ones((30, 4)))
    assert dims_for_threshold(r) == 0
    assert tail_variance_mass(r) == 0.0


def test_pca_reconstruction_and_sign_convention():
    codes = np.random.default_rng(2).standard_normal((200, 6)) @ np.diag([5, 3, 2, 1, 0.5, 0.1])
    r = pca(codes)
    back = r.project(codes) @ r.components
    np.testing.assert_allclose(back, codes - r.mean, atol=1e-10)
    idx = np.argmax(np.abs(r.components), axis=1)
    assert np.all(r.components[np.arange(6), idx] > 0)


def test_pca_needs_two_codes():
    with pytest.raises(EmptySampleError):
        pca(np.zeros((1, 3)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_explained_invariant_under_rotation(seed):
    rng = np.random.default_rng(seed)
    codes = rng.standard_normal((80, 5)) * rng.uniform(0.1, 3, 5)
    Q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    np.testing.assert_allclose(pca(codes).explained, pca(codes @ Q.T + 3.0).explained, atol=1e-10)


def test_hemisphere_inclusion_padded_needs_three_dims():
    p = KINDS["hemisphere"].sample_uniform(np.random.default_rng(3), 4000)
    codes = np.zeros((len(p), 16))
    codes[:, :3] = p
    assert dims_for_threshold(pca(codes), 0.99) == 3


def _affine_pair(kind, l=7, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((l, kind.n_coords))
    b = rng.standard_normal(l)
    pinv = np.linalg.pinv(A)
    return (lambda p: np.asarray(p) @ A.T + b), (lambda c: (np.asarray(c) - b) @ pinv.T)


def test_interpolation_error_vanishes_for_affine_autoencoder():
    # Ellipse-space pairs whose theta gap does not wrap, so chart midpoints are affine.
    k = KINDS["ellipse"]
    rng = np.random.default_rng(4)
    x = k.sample_uniform(rng, 400)
    y = x + rng.uniform(-0.3, 0.3, x.shape)
    y[:, 0] = np.clip(y[:, 0], 0.01, math.pi - 0.01)
    y[:, 1:] = np.clip(y[:, 1:], -1, 1)
    enc, dec = _affine_pair(k)
    render = lambda p: np.asarray(p, dtype=float)
    rows = interpolation_error(k, enc, dec, render, x, y, [0.1, 0.3, 1.0])
    assert all(abs(r.err_sq) < 1e-20 for r in rows)
    assert rows[-1].count == 400


def test_err_b_depends_only_on_midpoints():
    k = KINDS["klein"]
    x, y = sample_uniform_pairs(k, 100, np.random.default_rng(5))
    enc = lambda p: np.column_stack([np.sin(p[:, 0]), p[:, 1] ** 2, p[:, 0]])
    dec = lambda c: c[:, :2] * 0.5
    render = lambda p: np.asarray(p, dtype=float)
    _, _, eb = interpolation_terms(k, enc, dec, render, x, y)
    # recompute at the same midpoints with the partners listed in reverse order
    _, _, eb_swapped = interpolation_terms(k, enc, dec, render, y, x)
    np.testing.assert_allclose(np.sort(eb), np.sort(eb_swapped), atol=1e-14)


def test_interpolation_error_marks_empty_bins():
    k = KINDS["klein"]
    x, y = sample_uniform_pairs(k, 50, np.random.default_rng(6), min_dist=0.2)
    enc, dec = _affine_pair(k)
    rows = interpolation_error(k, enc, dec, lambda p: p, x, y, [0.01, 1.0])
    assert rows[0].empty and rows[0].count == 0 and rows[0].err_sq == 0.0
    assert not rows[1].empty


def test_self_intersection_linear_lower_bound():
    k = KINDS["ellipse"]
    rng = np.random.default_rng(7)
    A = rng.standard_normal((3, 3))
    enc = lambda p: np.asarray(p) @ A.T
    _, field = self_intersection_field(k, enc, None, 16)
    sigma_min = np.linalg.svd(A, compute_uv=False).min()
    # wrapped theta pairs give chart gaps up to pi - d, so the bound only holds from below
    assert field.min() >= sigma_min * (1 - 1e-9)


def test_self_intersection_constant_map_is_zero():
    k = KINDS["klein"]
    _, field = self_intersection_field(k, lambda p: np.ones((len(p), 3)), None, 16)
    assert np.all(field == 0.0)


def test_self_intersection_detects_overlapping_sheets():
    # A two-sheeted cover collapses (x, y) and (x + 1/2, y): the field reaches 0.
    k = KINDS["klein"]
    enc = lambda p: np.column_stack([np.cos(4 * math.pi * p[:, 0]), np.sin(4 * math.pi * p[:, 0]), p[:, 1]])
    _, field = self_intersection_field(k, enc, None, 16)
    assert field.min() < 1e-12
    # A distorted trig embedding keeps distinct points apart.
    emb = klein_trig()
    warp = lambda p: emb(p) @ np.diag([1.0, 1.3, 0.7, 1.1, 0.9])
    _, f2 = self_intersection_field(k, warp, None, 16)
    assert np.median(f2) > 0


def test_self_intersection_grid_minimum():
    with pytest.raises(ValueError):
        self_intersection_field("klein", lambda p: p, None, 8)


def test_distance_scatter_examples():
    k = KINDS["hemisphere"]
    x, y = sample_uniform_pairs(k, 300, np.random.default_rng(8))
    x = np.vstack([x, x[:5]])
    y = np.vstack([y, x[:5]])
    rows = distance_scatter(k, lambda p: np.asarray(p), x, y)
    assert len(rows) == 300
    np.testing.assert_allclose(rows[:, 1], 2 * np.sin(rows[:, 0] / 2), atol=1e-12)
    kf = KINDS["klein"]
    Q, _ = np.linalg.qr(np.random.default_rng(9).standard_normal((4, 2)))
    xf = 0.3 + 0.2 * np.random.default_rng(10).random((100, 2))
    yf = 0.3 + 0.2 * np.random.default_rng(11).random((100, 2))
    rows = distance_scatter(kf, lambda p: np.asarray(p) @ Q.T, xf, yf)
    np.testing.assert_allclose(rows[:, 1], rows[:, 0], atol=1e-10)


def test_compose_with_renderer():
    net = lambda a: a.sum(axis=1, keepdims=True)
    render = lambda p: np.ones((len(p), 2, 3))
    assert compose(net, render)(np.zeros((4, 2))).tolist() == [[6.0]] * 4


def test_csv_writers(tmp_path):
    r = pca(_plane_cloud())
    write_pca_csv(tmp_path / "p.csv", r)
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "component,variance,explained"
    write_err_csv(tmp_path / "e.csv", [])
    assert (tmp_path / "e.csv").read_text().strip() == "delta,err_sq,signed_err,count,empty"
    write_scatter_csv(tmp_path / "s.csv", np.array([[0.1, 0.2]]))
    pts = np.zeros((2, 2))
    write_self_intersection_csv(tmp_path / "f.csv", pts, np.array([1.0, 2.0]))
    assert (tmp_path / "f.csv").read_text().splitlines()[0] == "coord_0,coord_1,value"
