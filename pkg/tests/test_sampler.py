from __future__ import annotations

import numpy as np
import pytest

from bridgekit import bridge
from bridgekit.errors import BetaFloorViolated, InvalidGrid, PredictorShapeMismatch
from bridgekit.field import PixelField, RngState, clip
from bridgekit.sampler import (
    IdentityPredictor,
    OraclePredictor,
    TimeGrid,
    TrajectoryRecord,
    init_terminal,
    run_pf_ode,
    run_reverse,
)

from conftest import random_u


def pair(seed: int, shape=(4, 5, 1)):
    g = np.random.default_rng(seed)
    return PixelField(g.uniform(0, 1, shape)), PixelField(g.uniform(0, 1, shape))


def test_time_grid_validation():
    assert TimeGrid.uniform(4).times == (1.0, 0.75, 0.5, 0.25, 0.0)
    for bad in [(1.0,), (0.9, 0.0), (1.0, 0.1), (1.0, 0.5, 0.5, 0.0), (1.0, 0.2, 0.4, 0.0)]:
        with pytest.raises(InvalidGrid):
            TimeGrid(bad)
    with pytest.raises(InvalidGrid):
        TimeGrid.uniform(0)


def test_init_terminal_deterministic():
    _, lq = pair(0)
    assert init_terminal(lq, PixelField.zeros(lq.shape), "deterministic") == lq


def test_init_terminal_std():
    n = 100_000
    lq = PixelField.full((1, n, 1), 0.4)
    x0 = init_terminal(lq, PixelField.zeros(lq.shape), "stochastic", RngState(1)).data
    assert abs(x0.std() - 1.0) <= 0.01
    x1 = init_terminal(lq, PixelField.full(lq.shape, 1.0), "stochastic", RngState(2)).data
    assert abs(x1.std() - 2.0) <= 0.04


def test_run_reverse_oracle_single_step():
    hq, lq = pair(1)
    u = random_u(1)
    out, record = run_reverse(OraclePredictor(hq), lq, u, TimeGrid.uniform(1), 0.0, "deterministic")
    assert out == clip(hq)
    assert len(record.entries) == 2


def test_run_reverse_oracle_saturation():
    hq, lq = pair(2)
    hq = PixelField(hq.data * 1.4 - 0.2)  # partly outside [0, 1], so clipping matters
    u = random_u(2)
    outs = []
    for n in (1, 2, 5, 10):
        out, record = run_reverse(OraclePredictor(hq), lq, u, TimeGrid.uniform(n), 0.0, "stochastic", rng=RngState(n))
        outs.append(out)
        assert len(record.entries) == n + 1
    for o in outs[1:]:
        assert o.allclose(outs[0], atol=1e-6)
    assert outs[0] == clip(hq)


def test_run_reverse_identity():
    _, lq = pair(3)
    out, _ = run_reverse(IdentityPredictor(), lq, random_u(3), TimeGrid.uniform(1), 0.0, "deterministic")
    assert out == clip(lq)


def test_run_reverse_deterministic_is_repeatable():
    hq, lq = pair(4)
    u = random_u(4)
    pred = lambda x, t, uu: PixelField(0.5 * x.data + 0.5 * hq.data)
    a, ra = run_reverse(pred, lq, u, TimeGrid.uniform(7), 0.0, "deterministic")
    b, rb = run_reverse(pred, lq, u, TimeGrid.uniform(7), 0.0, "deterministic")
    assert a == b and ra.raw_output == rb.raw_output


def test_run_reverse_oracle_trajectory_approaches_clean():
    hq, lq = pair(5)
    u = random_u(5)
    _, record = run_reverse(OraclePredictor(hq), lq, u, TimeGrid.uniform(10), 0.0, "deterministic", keep_states=True)
    dists = [np.linalg.norm(s.data - hq.data) for s in record.states]
    assert all(b <= a + 1e-12 for a, b in zip(dists, dists[1:]))


def test_ddim_noise_preserved_along_grid():
    hq, lq = pair(6)
    u = random_u(6)
    g = np.random.default_rng(0)
    inner = np.sort(g.uniform(0.02, 0.98, 8))[::-1]
    grid = TimeGrid((1.0, *map(float, inner), 0.0))
    x, _ = bridge.forward_sample(hq, lq, u, 1.0, rng=RngState(3))
    eps0 = bridge.epsilon_from_prediction(x, lq, hq, bridge.coefficients(1.0, u))
    for t, s in list(grid.pairs())[:-1]:
        x = bridge.ddim_step(x, lq, hq, bridge.coefficients(t, u), bridge.coefficients(s, u))
        eps = bridge.epsilon_from_prediction(x, lq, hq, bridge.coefficients(s, u))
        assert np.max(np.abs(eps.data - eps0.data)) <= 1e-9


def test_terminal_branch_never_divides_by_floor(monkeypatch):
    calls = []
    real_eps = bridge.epsilon_from_prediction
    real_post = bridge.posterior_moments

    def eps_spy(x_t, x_lq, x_hat0, coeff):
        calls.append(float(np.min(coeff.beta.data)))
        return real_eps(x_t, x_lq, x_hat0, coeff)

    def post_spy(x_t, x_lq, x_hat0, ct, cs):
        calls.append(float(np.min(ct.beta.data)))
        return real_post(x_t, x_lq, x_hat0, ct, cs)

    monkeypatch.setattr(bridge, "epsilon_from_prediction", eps_spy)
    monkeypatch.setattr(bridge, "posterior_moments", post_spy)
    hq, lq = pair(7)
    u = random_u(7)
    for n in range(1, 11):
        for eta in (0.0, 0.5, 1.0):
            run_reverse(OraclePredictor(hq), lq, u, TimeGrid.uniform(n), eta, "stochastic", rng=RngState(n))
    assert calls and min(calls) >= bridge.BETA_FLOOR


def test_predictor_shape_checked():
    _, lq = pair(8)
    bad = lambda x, t, u: PixelField.zeros((1, 1, 1))
    with pytest.raises(PredictorShapeMismatch):
        run_reverse(bad, lq, random_u(8), TimeGrid.uniform(2), 0.0, "deterministic")


def test_run_pf_ode_single_step_exact():
    hq, lq = pair(9)
    u = PixelField.zeros(hq.shape)
    _, record = run_pf_ode(OraclePredictor(hq), lq, u, TimeGrid.uniform(1))
    assert np.max(np.abs(record.raw_output.data - hq.data)) <= 1e-8


def test_run_pf_ode_step_count_consistency():
    hq, lq = pair(10)
    u = PixelField.zeros(hq.shape)
    a, _ = run_pf_ode(OraclePredictor(hq), lq, u, TimeGrid.uniform(1))
    b, _ = run_pf_ode(OraclePredictor(hq), lq, u, TimeGrid.uniform(64))
    assert a.allclose(b, atol=1e-6)


def test_run_pf_ode_identity_stays_at_input():
    _, lq = pair(11)
    out, record = run_pf_ode(IdentityPredictor(), lq, PixelField.zeros(lq.shape), TimeGrid.uniform(1))
    assert record.raw_output.allclose(lq, atol=1e-15)


def test_run_pf_ode_midpoint_rule_recorded():
    hq, lq = pair(12)
    u = random_u(12)
    _, record = run_pf_ode(OraclePredictor(hq), lq, u, TimeGrid.uniform(4))
    assert record.metadata["alpha_dot_midpoint_steps"] == [0]
    _, record = run_pf_ode(OraclePredictor(hq), lq, PixelField.zeros(u.shape), TimeGrid.uniform(4))
    assert record.metadata["alpha_dot_midpoint_steps"] == []


def test_trajectory_csv(tmp_path):
    hq, lq = pair(13)
    _, record = run_reverse(OraclePredictor(hq), lq, random_u(13), TimeGrid.uniform(3), 0.0, "deterministic", keep_states=True)
    text = record.to_csv(tmp_path / "traj.csv").read_bytes().decode()
    lines = text.split("\n")
    assert lines[0] == ",".join(TrajectoryRecord.CSV_COLUMNS)
    assert len([l for l in lines if l]) == 1 + 4
    assert "\r" not in text
    snaps = record.write_snapshots(tmp_path / "snaps")
    assert [p.name for p in snaps] == [f"step_{i}.pgm" for i in range(4)]


def test_t_zero_step_needs_direct_branch():
    hq, lq = pair(14)
    u = random_u(14)
    with pytest.raises(BetaFloorViolated):
        bridge.epsilon_from_prediction(hq, lq, hq, bridge.coefficients(0.0, u))
