from __future__ import annotations

import numpy as np
import pytest

from bridgekit import bridge
from bridgekit.bridge import (
    coefficients,
    ddim_step,
    ddpm_step,
    epsilon_from_prediction,
    forward_sample,
    general_step,
    pf_ode_velocity,
    posterior_moments,
)
from bridgekit.errors import BetaFloorViolated, DomainError, NonMonotoneBeta, ShapeMismatch
from bridgekit.field import PixelField, RngState
from bridgekit.schedules import ScheduleParams, alpha_dot

from conftest import random_u

P1 = ScheduleParams(lambda_b=1.0)


def images(seed: int, shape=(4, 5, 1)):
    g = np.random.default_rng(seed)
    return PixelField(g.uniform(0, 1, shape)), PixelField(g.uniform(0, 1, shape))


def test_forward_sample_boundaries():
    hq, lq = images(0)
    u = random_u(0)
    x0, _ = forward_sample(hq, lq, u, 0.0, rng=RngState(1))
    assert x0 == hq
    zero = PixelField.zeros(hq.shape)
    x1, eps = forward_sample(hq, lq, zero, 1.0, rng=RngState(1))
    assert x1.allclose(lq + eps, atol=1e-15)
    with pytest.raises(ShapeMismatch):
        forward_sample(hq, PixelField.zeros((1, 1, 1)), u, 0.5, rng=RngState(1))


def test_forward_sample_monte_carlo_mean():
    n = 100_000
    hq, lq = PixelField.full((1, n, 1), 0.2), PixelField.full((1, n, 1), 0.9)
    u = PixelField.full((1, n, 1), 0.4)
    x, _ = forward_sample(hq, lq, u, 0.5, rng=RngState(2))
    c = coefficients(0.5, PixelField.full((1, 1, 1), 0.4))
    mean = float(c.alpha.data[0, 0, 0] * 0.9 + c.gamma.data[0, 0, 0] * 0.2)
    beta = float(c.beta.data[0, 0, 0])
    assert abs(x.data.mean() - mean) <= 3 * beta / np.sqrt(n)


def test_epsilon_round_trip():
    g = np.random.default_rng(4)
    for i in range(100):
        hq, lq = images(i)
        u = random_u(i)
        t = float(g.uniform(0.05, 1.0))
        x_t, eps = forward_sample(hq, lq, u, t, rng=RngState(i))
        rec = epsilon_from_prediction(x_t, lq, hq, coefficients(t, u))
        assert np.linalg.norm(rec.data - eps.data) <= 1e-10 * np.linalg.norm(eps.data)


def test_epsilon_scalar_example():
    c = bridge.Coefficients(
        PixelField.vector([0.8]), PixelField.vector([0.2]), PixelField.vector([0.8]), 0.5
    )
    eps = epsilon_from_prediction(PixelField.vector([1.2]), PixelField.vector([1.0]), PixelField.vector([0.0]), c)
    assert float(eps.data[0, 0, 0]) == pytest.approx(0.5, abs=1e-15)
    on_path = PixelField.vector([0.8])
    assert epsilon_from_prediction(on_path, PixelField.vector([1.0]), PixelField.vector([0.0]), c) == PixelField.vector([0.0])


def test_epsilon_refuses_t_zero():
    hq, lq = images(1)
    u = random_u(1)
    with pytest.raises(BetaFloorViolated):
        epsilon_from_prediction(hq, lq, hq, coefficients(0.0, u))


def test_posterior_variance_hand_value():
    u = PixelField.zeros((1, 1, 1))
    ct, cs = coefficients(0.8, u, P1), coefficients(0.4, u, P1)
    assert float(ct.beta.data[0, 0, 0]) == pytest.approx(0.8, abs=1e-15)
    assert float(cs.beta.data[0, 0, 0]) == pytest.approx(0.4, abs=1e-15)
    x = PixelField.vector([0.3])
    m = posterior_moments(x, x, x, ct, cs)
    assert float(m.std.data[0, 0, 0]) ** 2 == pytest.approx(0.12, abs=1e-14)


def test_posterior_terminal_collapse():
    hq, lq = images(2)
    u = random_u(2)
    x_t, _ = forward_sample(hq, lq, u, 0.7, rng=RngState(3))
    pred = images(9)[0]
    m = posterior_moments(x_t, lq, pred, coefficients(0.7, u), coefficients(0.0, u))
    assert np.all(m.std.data == 0.0)
    assert m.mean.allclose(pred, atol=1e-15)


def test_posterior_on_noiseless_path():
    hq, lq = images(3)
    u = random_u(3)
    ct, cs = coefficients(0.6, u), coefficients(0.3, u)
    x_t = PixelField(ct.alpha.data * lq.data + ct.gamma.data * hq.data)
    m = posterior_moments(x_t, lq, hq, ct, cs)
    assert m.mean.allclose(PixelField(cs.alpha.data * lq.data + cs.gamma.data * hq.data), atol=1e-15)


def test_posterior_preconditions():
    hq, lq = images(4)
    u = random_u(4)
    with pytest.raises(DomainError):
        posterior_moments(hq, lq, hq, coefficients(0.3, u), coefficients(0.6, u))
    with pytest.raises(BetaFloorViolated):
        posterior_moments(hq, lq, hq, coefficients(0.0, u), bridge.Coefficients(u, u, PixelField.zeros(u.shape), -1.0))
    # beta_s >= beta_t on some element
    ct = coefficients(0.6, u)
    bad_s = bridge.Coefficients(ct.alpha, ct.gamma, ct.beta * 2, 0.3)
    with pytest.raises(NonMonotoneBeta):
        posterior_moments(hq, lq, hq, ct, bad_s)


def _scalar_setup(n: int, t: float = 0.7, s: float = 0.35, u: float = 0.3):
    uf = PixelField.full((1, n, 1), u)
    x_t = PixelField.full((1, n, 1), 0.55)
    lq = PixelField.full((1, n, 1), 0.9)
    pred = PixelField.full((1, n, 1), 0.1)
    return x_t, lq, pred, coefficients(t, uf), coefficients(s, uf)


def test_ddpm_step_monte_carlo():
    n = 100_000
    x_t, lq, pred, ct, cs = _scalar_setup(n)
    m = posterior_moments(x_t, lq, pred, ct, cs)
    mu, sd = float(m.mean.data[0, 0, 0]), float(m.std.data[0, 0, 0])
    x = ddpm_step(x_t, lq, pred, ct, cs, RngState(5)).data
    assert abs(x.mean() - mu) <= 3 * sd / np.sqrt(n)
    assert abs(x.std() / sd - 1.0) <= 0.01


def test_ddpm_step_terminal_deterministic():
    hq, lq = images(5)
    u = random_u(5)
    x_t, _ = forward_sample(hq, lq, u, 0.5, rng=RngState(6))
    out = ddpm_step(x_t, lq, hq, coefficients(0.5, u), coefficients(0.0, u), RngState(7))
    assert out.allclose(hq, atol=1e-15)


def test_ddim_step_preserves_noise():
    hq, lq = images(6)
    u = random_u(6)
    x_t, eps = forward_sample(hq, lq, u, 0.9, rng=RngState(8))
    x_s = ddim_step(x_t, lq, hq, coefficients(0.9, u), coefficients(0.4, u))
    cs = coefficients(0.4, u)
    direct = PixelField(cs.alpha.data * lq.data + cs.gamma.data * hq.data + cs.beta.data * eps.data)
    assert x_s.allclose(direct, atol=1e-14)
    zero_eps = PixelField.zeros(hq.shape)
    x_t0, _ = forward_sample(hq, lq, u, 0.9, eps=zero_eps)
    on_path = ddim_step(x_t0, lq, hq, coefficients(0.9, u), cs)
    assert on_path.allclose(PixelField(cs.alpha.data * lq.data + cs.gamma.data * hq.data), atol=1e-15)


def test_ddim_step_terminal():
    hq, lq = images(7)
    u = random_u(7)
    x_t, _ = forward_sample(hq, lq, u, 0.3, rng=RngState(9))
    pred = images(11)[1]
    assert ddim_step(x_t, lq, pred, coefficients(0.3, u), coefficients(0.0, u)).allclose(pred, atol=1e-15)


def test_general_step_eta0_is_ddim():
    hq, lq = images(8)
    u = random_u(8)
    x_t, _ = forward_sample(hq, lq, u, 0.8, rng=RngState(10))
    pred = images(12)[0]
    ct, cs = coefficients(0.8, u), coefficients(0.5, u)
    assert general_step(x_t, lq, pred, ct, cs, 0.0) == ddim_step(x_t, lq, pred, ct, cs)


def test_general_step_eta1_matches_ddpm():
    n = 100_000
    x_t, lq, pred, ct, cs = _scalar_setup(n)
    a = general_step(x_t, lq, pred, ct, cs, 1.0, RngState(11)).data
    b = ddpm_step(x_t, lq, pred, ct, cs, RngState(12)).data
    se = b.std() * np.sqrt(2.0 / n)
    assert abs(a.mean() - b.mean()) <= 4 * se
    assert abs(a.std() / b.std() - 1.0) <= 0.02


def test_general_step_eta1_terminal():
    hq, lq = images(9)
    u = random_u(9)
    x_t, _ = forward_sample(hq, lq, u, 0.5, rng=RngState(13))
    out = general_step(x_t, lq, hq, coefficients(0.5, u), coefficients(0.0, u), 1.0, RngState(14))
    assert out.allclose(hq, atol=1e-15)
    with pytest.raises(DomainError):
        general_step(x_t, lq, hq, coefficients(0.5, u), coefficients(0.0, u), 1.5, RngState(14))


def test_marginal_composition():
    n = 100_000
    t, s, u, hq, lq = 0.75, 0.3, 0.6, 0.25, 0.8
    uf = PixelField.full((1, n, 1), u)
    H, L = PixelField.full(uf.shape, hq), PixelField.full(uf.shape, lq)
    ct, cs = coefficients(t, uf), coefficients(s, uf)
    rng = RngState(15)
    x_s, _ = forward_sample(H, L, uf, s, rng=rng)
    step = (ct.alpha.data - cs.alpha.data) * lq + (ct.gamma.data - cs.gamma.data) * hq
    x_t = x_s.data + step + np.sqrt(ct.beta.data**2 - cs.beta.data**2) * rng.normal(uf.shape)
    mean = float(ct.alpha.data[0, 0, 0] * lq + ct.gamma.data[0, 0, 0] * hq)
    var = float(ct.beta.data[0, 0, 0] ** 2)
    assert abs(x_t.mean() - mean) <= 4 * np.sqrt(var / n)
    assert abs(x_t.var() / var - 1.0) <= 0.02


def test_pf_ode_velocity_terminal_example():
    hq, lq = images(10)
    u = PixelField.zeros(hq.shape)
    v = pf_ode_velocity(lq, lq, hq, u, 1.0, P1)
    assert v.allclose(lq - hq, atol=1e-15)


def test_pf_ode_velocity_direction():
    hq, lq = images(11)
    u = random_u(11)
    diff = (lq.data - hq.data).ravel()
    for t in np.linspace(0.05, 0.95, 19):
        c = coefficients(float(t), u)
        on_path = PixelField(c.alpha.data * lq.data + c.gamma.data * hq.data)
        v = pf_ode_velocity(on_path, lq, hq, u, float(t))
        # the correction term vanishes and v = alpha_dot (x_lq - x_hq), parallel elementwise
        assert v.allclose(PixelField(alpha_dot(float(t), u).data * (lq.data - hq.data)), atol=1e-14)
        if np.all(alpha_dot(float(t), u).data == alpha_dot(float(t), u).data.ravel()[0]):
            vv = v.data.ravel()
            assert abs(vv @ diff) == pytest.approx(np.linalg.norm(vv) * np.linalg.norm(diff), rel=1e-12)


def test_pf_ode_velocity_bounded_near_terminal():
    hq, lq = images(12)
    u = random_u(12)
    x_t, _ = forward_sample(hq, lq, u, 0.95, rng=RngState(16))
    ts = np.linspace(0.9, 0.999, 50)
    norms = [np.linalg.norm(pf_ode_velocity(x_t, lq, hq, u, float(t)).data) for t in ts]
    # beta_dot <= (1+u) max(lambda_b, 2), beta >= beta_0.9, and alpha_dot is largest at the right end
    c9 = coefficients(0.9, u)
    resid = max(np.linalg.norm(x_t.data - coefficients(float(t), u).alpha.data * lq.data - coefficients(float(t), u).gamma.data * hq.data) for t in ts)
    bound = np.max(2 * (1 + u.data) / c9.beta.data) * resid + np.max(alpha_dot(0.999, u).data) * np.linalg.norm(lq.data - hq.data)
    assert np.all(np.isfinite(norms))
    assert max(norms) <= bound
    with pytest.raises(DomainError):
        pf_ode_velocity(x_t, lq, hq, u, 0.0)
