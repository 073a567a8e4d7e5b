from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bridgekit.errors import DomainError, RestorerShapeMismatch, ShapeMismatch
from bridgekit.field import PixelField
from bridgekit.synthetic import checkerboard
from bridgekit.uncertainty import (
    BoxFilterRestorer,
    IdentityRestorer,
    MedianRestorer,
    OracleRestorer,
    gamma_function,
    ggd_uncertainty,
    heteroscedastic_nll,
    log_gamma,
    make_restorer,
    residual_uncertainty,
    sigmoid,
)

unit_fields = st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 3)).flatmap(
    lambda s: arrays(np.float64, s, elements=st.floats(0.0, 1.0))
).map(PixelField)


@given(unit_fields)
def test_residual_identity_is_zero(x):
    assert np.all(residual_uncertainty(IdentityRestorer(), x).data == 0.0)


@settings(deadline=None)
@given(unit_fields, st.sampled_from(["box", "median"]))
def test_residual_in_unit_interval(x, name):
    u = residual_uncertainty(make_restorer(name, 3), x).data
    assert np.all((u >= 0) & (u <= 1))


def test_residual_oracle_constant_offset():
    g = np.random.default_rng(0)
    hq = PixelField(g.uniform(0, 0.8, (5, 5, 1)))
    u = residual_uncertainty(OracleRestorer(hq), hq + 0.2)
    assert np.allclose(u.data, 0.1, atol=1e-15)


def test_residual_higher_on_texture():
    # left half flat, right half a one-pixel checkerboard
    board = checkerboard((8, 8, 1), period=1, lo=0.0, hi=1.0).data.copy()
    board[:, :4] = 0.5
    x = PixelField(board)
    u = residual_uncertainty(BoxFilterRestorer(3), x).data[:, :, 0]
    flat, texture = u[:, :3], u[:, 5:]  # keep clear of the seam
    assert flat.max() == 0.0
    assert texture.min() > flat.max()


def test_box_filter_against_brute_force():
    g = np.random.default_rng(1)
    x = g.uniform(0, 1, (6, 7, 2))
    out = BoxFilterRestorer(3)(PixelField(x)).data
    pad = np.pad(x, ((1, 1), (1, 1), (0, 0)), mode="edge")
    brute = np.zeros_like(x)
    for r in range(6):
        for c in range(7):
            brute[r, c] = pad[r : r + 3, c : c + 3].mean(axis=(0, 1))
    assert np.allclose(out, brute, atol=1e-14)
    med = MedianRestorer(3)(PixelField(x)).data
    assert med[2, 3, 1] == np.median(pad[2:5, 3:6, 1])


def test_restorer_shape_checked():
    with pytest.raises(RestorerShapeMismatch):
        residual_uncertainty(lambda x: PixelField.zeros((1, 1, 1)), PixelField.zeros((2, 2, 1)))
    with pytest.raises(ValueError):
        make_restorer("unknown")


def test_gamma_known_values():
    assert gamma_function(1.0) == pytest.approx(1.0, rel=1e-13)
    assert gamma_function(0.5) == pytest.approx(math.sqrt(math.pi), rel=1e-13)
    assert gamma_function(5.0) == pytest.approx(24.0, rel=1e-13)
    with pytest.raises(DomainError):
        gamma_function(0.0)
    with pytest.raises(DomainError):
        gamma_function(-1.5)


def test_gamma_against_stdlib():
    for x in np.linspace(0.5, 20.0, 400):
        assert gamma_function(float(x)) == pytest.approx(math.gamma(float(x)), rel=1e-10)
    for x in np.linspace(0.01, 0.5, 50):
        assert gamma_function(float(x)) == pytest.approx(math.gamma(float(x)), rel=1e-10)
    xs = np.linspace(0.01, 30.0, 300)
    assert np.allclose(log_gamma(xs), [math.lgamma(float(v)) for v in xs], rtol=1e-12, atol=1e-12)


def test_gamma_recurrence():
    for x in np.linspace(0.5, 10.0, 200):
        x = float(x)
        assert gamma_function(x + 1) == pytest.approx(x * gamma_function(x), rel=1e-9)


def test_ggd_gaussian_case():
    u = ggd_uncertainty(PixelField.vector([math.sqrt(2.0)]), PixelField.vector([2.0]))
    assert float(u.data[0, 0, 0]) == pytest.approx(1.0 / (1.0 + math.exp(-1.0)), abs=1e-6)
    g = np.random.default_rng(2)
    a = g.uniform(0.01, 3.0, 50)
    got = ggd_uncertainty(PixelField.vector(a), PixelField.vector(np.full(50, 2.0))).data.ravel()
    assert np.allclose(got, 1.0 / (1.0 + np.exp(-(a * a) / 2.0)), atol=1e-9, rtol=0)
    tiny = ggd_uncertainty(PixelField.vector([1e-8]), PixelField.vector([2.0]))
    assert float(tiny.data[0, 0, 0]) == pytest.approx(0.5, abs=1e-12)


def test_ggd_monotone_in_scale():
    a = np.linspace(0.05, 2.0, 40)
    for shape in (0.5, 1.0, 2.0, 4.0):
        u = ggd_uncertainty(PixelField.vector(a), PixelField.vector(np.full(a.size, shape))).data.ravel()
        assert np.all(np.diff(u) >= 0)
        assert np.all((u > 0.5) & (u <= 1.0))


def test_ggd_domain():
    with pytest.raises(DomainError):
        ggd_uncertainty(PixelField.vector([0.0]), PixelField.vector([2.0]))
    with pytest.raises(DomainError):
        ggd_uncertainty(PixelField.vector([1.0]), PixelField.vector([1e-4]))
    with pytest.raises(ShapeMismatch):
        ggd_uncertainty(PixelField.vector([1.0]), PixelField.vector([2.0, 2.0]))


def test_sigmoid_stable():
    assert np.allclose(sigmoid(np.array([-800.0, 0.0, 800.0])), [0.0, 0.5, 1.0])


def test_nll_examples():
    x = PixelField.vector([0.1, 0.7])
    assert heteroscedastic_nll(x, x, PixelField.zeros(x.shape)) == 0.0
    assert heteroscedastic_nll(x, x + 1.0, PixelField.zeros(x.shape)) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ShapeMismatch):
        heteroscedastic_nll(x, x, PixelField.zeros((1, 1, 1)))


def test_nll_stationary_at_log_r2():
    g = np.random.default_rng(3)
    hq = PixelField(g.uniform(0, 1, (3, 4, 1)))
    hat = PixelField(hq.data + g.choice([-1, 1], hq.shape) * g.uniform(0.05, 0.5, hq.shape))
    s_star = np.log((hq.data - hat.data) ** 2)
    h = 1e-6
    base = heteroscedastic_nll(hq, hat, PixelField(s_star))
    for idx in np.ndindex(hq.shape):
        up, down = s_star.copy(), s_star.copy()
        up[idx] += h
        down[idx] -= h
        grad = (heteroscedastic_nll(hq, hat, PixelField(up)) - heteroscedastic_nll(hq, hat, PixelField(down))) / (2 * h)
        assert abs(grad) <= 1e-6
    for delta in (-0.5, 0.5):
        assert base <= heteroscedastic_nll(hq, hat, PixelField(s_star + delta))
