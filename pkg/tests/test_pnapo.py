from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import make_record
from rfpnapo.errors import ConfigurationError
from rfpnapo.numerics import finite_diff_check, mlp_init, optim_init, sigmoid
from rfpnapo.pnapo import (
    AlignConfig,
    BetaSchedule,
    align_step,
    effective_beta,
    f_controller,
    g_controller,
    pnapo_loss,
    pnapo_objective,
    pnapo_value_grad,
    score,
)

LOG2 = math.log(2.0)


def test_f_controller_values():
    assert f_controller(0.0) == 0.0
    assert f_controller(math.log(3.0)) == pytest.approx(0.5, abs=1e-12)
    assert f_controller(10.0) > 0.9999
    with pytest.raises(ValueError):
        f_controller(-0.1)
    with pytest.raises(ValueError):
        f_controller(float("inf"))


def test_f_controller_monotone_grid():
    grid = np.linspace(0.0, 12.0, 10_000)
    vals = np.array([f_controller(float(x)) for x in grid])
    assert np.all(np.diff(vals) > 0.0)
    assert np.all((vals >= 0.0) & (vals < 1.0))


def test_g_controller_piecewise_values():
    assert g_controller(0, 1000, 2000) == 1.0
    assert g_controller(1000, 1000, 2000) == 1.0
    assert g_controller(2000, 1000, 2000) == 0.5
    assert g_controller(10_000, 1000, 2000) == 0.5
    # midpoint of the cosine branch: 0.5 + 0.5*cos(pi/4)
    assert g_controller(1500, 1000, 2000) == pytest.approx(0.8535533905932737, abs=1e-12)
    assert g_controller(1500, 1000, 2000) == pytest.approx(0.5 + 0.5 / math.sqrt(2.0), abs=1e-15)


def test_g_controller_monotone_and_continuous():
    grid = np.linspace(0.0, 3000.0, 10_000)
    vals = np.array([g_controller(float(n), 1000, 2000) for n in grid])
    assert np.all(np.diff(vals) <= 0.0)
    for boundary in (1000.0, 2000.0):
        below = g_controller(boundary - 1e-7, 1000, 2000)
        above = g_controller(boundary + 1e-7, 1000, 2000)
        assert abs(below - above) < 1e-6


def test_g_controller_rejects_bad_window():
    with pytest.raises(ConfigurationError):
        g_controller(5, 2000, 1000)
    with pytest.raises(ConfigurationError):
        g_controller(5, 1000, 1000)


def test_effective_beta_composition():
    sched = BetaSchedule(beta=50.0, n1=1000, n2=2000, dynamic=True)
    dr, n = 0.8, 1500
    expected = 50.0 * f_controller(dr) * g_controller(n, 1000, 2000)
    assert effective_beta(sched, dr, n) == pytest.approx(expected, rel=1e-15)
    # static schedule ignores both modulators
    static = BetaSchedule(beta=50.0, n1=1000, n2=2000, dynamic=False)
    assert effective_beta(static, dr, n) == 50.0
    assert effective_beta(static, 0.0, 1) == 50.0


def test_schedule_validation():
    with pytest.raises(ConfigurationError):
        BetaSchedule(beta=0.0)
    with pytest.raises(ConfigurationError):
        BetaSchedule(beta=1.0, n1=0, n2=5)
    with pytest.raises(ConfigurationError):
        BetaSchedule(beta=1.0, n1=7, n2=7)


def test_score_zero_when_params_equal_reference(small_spec, small_params):
    rng = np.random.default_rng(14)
    for _ in range(10):
        rec = make_record(rng, small_spec)
        t = float(rng.random())
        s_w = score(small_params, small_params, small_spec, rec.x0w, rec.xTw, rec.cond, t)
        assert s_w == 0.0


def test_loss_at_reference_is_log_two(small_spec, small_params):
    rng = np.random.default_rng(15)
    for trial in range(50):
        rec = make_record(rng, small_spec, delta_r=float(rng.random() * 3))
        t = float(rng.random())
        beta_eff = float(rng.random() * 60 + 1e-3)
        loss = pnapo_loss(small_params, small_params, small_spec, rec, t, beta_eff)
        assert loss == pytest.approx(LOG2, abs=1e-9)


def test_gradient_coefficient_is_half_beta_at_reference(small_spec, small_params):
    rng = np.random.default_rng(16)
    rec = make_record(rng, small_spec)
    loss, grad, margin = pnapo_value_grad(
        small_params, small_params, small_spec, rec, t_w=0.4, beta_eff=8.0
    )
    assert loss == pytest.approx(LOG2, abs=1e-12)
    assert margin == 0.0
    # gradient need not vanish at the reference; the branch pulls are distinct
    assert np.linalg.norm(grad) > 0.0


def test_stable_softplus_matches_naive_composition(small_spec, small_params):
    # the loss equals -log sigmoid(-z); check against that form away from overflow
    rng = np.random.default_rng(17)
    ref = mlp_init(small_spec, 23)
    for trial in range(30):
        rec = make_record(rng, small_spec)
        t = float(rng.random())
        beta_eff = float(rng.random() * 20 + 0.1)
        loss, _, margin = pnapo_value_grad(small_params, ref, small_spec, rec, t, beta_eff)
        z = -margin
        if abs(z) < 30:
            naive = -math.log(sigmoid(-z))
            assert loss == pytest.approx(naive, abs=1e-9)


def test_extreme_margins_do_not_overflow(small_spec, small_params):
    rng = np.random.default_rng(18)
    ref = mlp_init(small_spec, 24)
    rec = make_record(rng, small_spec)
    loss, grad, _ = pnapo_value_grad(small_params, ref, small_spec, rec, 0.5, beta_eff=1e6)
    assert np.isfinite(loss)
    assert np.all(np.isfinite(grad))


def test_pnapo_gradient_finite_differences(small_spec, small_params):
    rng = np.random.default_rng(19)
    ref = mlp_init(small_spec, 25)
    for trial in range(4):
        rec = make_record(rng, small_spec)
        t = float(rng.random() * 0.98)
        obj = pnapo_objective(ref, small_spec, rec, t, beta_eff=float(1 + trial * 3))
        assert finite_diff_check(obj, small_params) < 1e-5


def test_separate_branch_times_supported(small_spec, small_params):
    rng = np.random.default_rng(20)
    ref = mlp_init(small_spec, 26)
    rec = make_record(rng, small_spec)
    shared = pnapo_value_grad(small_params, ref, small_spec, rec, t_w=0.3, beta_eff=2.0)
    split = pnapo_value_grad(small_params, ref, small_spec, rec, t_w=0.3, beta_eff=2.0, t_l=0.9)
    assert shared[0] != split[0]


def test_zero_gap_records_with_dynamic_schedule_freeze_params(small_spec, small_params):
    # delta_r = 0 -> f(0) = 0 -> beta_eff = 0 -> z = 0, sigmoid'(0)*0 = 0 gradient
    rng = np.random.default_rng(21)
    records = [make_record(rng, small_spec, delta_r=0.0) for _ in range(4)]
    sched = BetaSchedule(beta=50.0, n1=10, n2=20, dynamic=True)
    optim = optim_init(small_params.size, lr=0.1)
    params, _, metrics = align_step(
        np.array(small_params), small_params, small_spec, optim, records, sched,
        step_index=1, rng=np.random.default_rng(0),
    )
    assert metrics["loss"] == pytest.approx(LOG2, abs=1e-15)
    assert metrics["beta_eff_mean"] == 0.0
    assert np.array_equal(params, small_params)  # zero gradient => Adam no-op


def test_align_step_metrics_shape(small_spec, small_params):
    rng = np.random.default_rng(22)
    records = [make_record(rng, small_spec, delta_r=0.5) for _ in range(6)]
    sched = BetaSchedule(beta=5.0, n1=10, n2=20, dynamic=True)
    optim = optim_init(small_params.size, lr=1e-3)
    params, optim2, metrics = align_step(
        np.array(small_params), small_params, small_spec, optim, records, sched,
        step_index=3, rng=np.random.default_rng(5),
    )
    assert set(metrics) == {"step", "loss", "margin_mean", "beta_eff_mean", "grad_norm"}
    assert metrics["step"] == 3
    assert optim2.step_count == 1
    assert not np.array_equal(params, small_params)


def test_align_config_validation():
    sched = BetaSchedule(beta=1.0)
    with pytest.raises(ConfigurationError):
        AlignConfig(method="ppo", lr=1e-3, steps=10, batch=4, schedule=sched, seed=0)
    with pytest.raises(ConfigurationError):
        AlignConfig(method="pnapo", lr=0.0, steps=10, batch=4, schedule=sched, seed=0)
