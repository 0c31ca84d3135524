"""Noising schedule: closed-form values, perturbation statistics, targets."""

import numpy as np
import pytest

from trajrep.sde import VESDE, grid_times

from oracles import ve_marginal_std


def test_marginal_std_closed_form_values():
    sde = VESDE(sigma_min=0.01, sigma_max=50.0)
    # sigma(0.5) = 0.01 * sqrt(5000), so std = sqrt(0.5 - 1e-4)
    assert sde.marginal_std(0.5) == pytest.approx(0.70703607, abs=1e-7)
    assert sde.marginal_std(1.0) == pytest.approx(np.sqrt(2500.0 - 1e-4), rel=1e-12)
    assert sde.marginal_std(0.0) == 0.0
    got = sde.marginal_std(np.linspace(0, 1, 11))
    want = ve_marginal_std(np.linspace(0, 1, 11), 0.01, 50.0)
    assert np.allclose(got, want, rtol=1e-12)


def test_std_strictly_increasing():
    sde = VESDE()
    t = np.linspace(sde.t_floor, 1.0, 200)
    s = sde.marginal_std(t)
    assert np.all(np.diff(s) > 0)
    assert s[0] > 0


def test_sample_t_respects_floor():
    sde = VESDE(t_floor=1e-5)
    t = sde.sample_t(np.random.default_rng(0), 10000)
    assert t.min() >= 1e-5 and t.max() <= 1.0


def test_perturb_statistics_match_kernel():
    sde = VESDE()
    rng = np.random.default_rng(1)
    x0 = np.zeros((20000, 4))
    t = np.full(20000, 0.5)
    xt, eps, std = sde.perturb(x0, t, rng)
    emp = (xt - x0).std()
    assert emp == pytest.approx(sde.marginal_std(0.5), rel=0.02)
    assert np.allclose(xt, x0 + std * eps)


def test_score_target_identity():
    # -(x_t - x_0)/var must equal -eps/std exactly when x_t = x_0 + std*eps
    sde = VESDE()
    rng = np.random.default_rng(2)
    x0 = rng.standard_normal((16, 3, 4, 4))
    t = sde.sample_t(rng, 16)
    xt, eps, std = sde.perturb(x0, t, rng)
    target = sde.score_target(x0, xt, t)
    assert np.allclose(target, -eps / std, rtol=1e-10)
    # and weight(t) * ||target||^2 == ||eps||^2 per sample
    w = sde.weight(t).reshape(-1, 1, 1, 1)
    lhs = (w * target**2).sum(axis=(1, 2, 3))
    rhs = (eps**2).sum(axis=(1, 2, 3))
    assert np.allclose(lhs, rhs, rtol=1e-9)


def test_perturb_time_shape_checked():
    sde = VESDE()
    with pytest.raises(ValueError, match="shape"):
        sde.perturb(np.zeros((4, 2)), np.zeros(3), np.random.default_rng(0))


def test_bad_schedule_rejected():
    with pytest.raises(ValueError):
        VESDE(sigma_min=2.0, sigma_max=1.0)
    with pytest.raises(ValueError):
        VESDE(t_floor=0.0)


def test_grid_times():
    assert np.array_equal(grid_times(2), [0.0, 0.5, 1.0])
    g = grid_times(10)
    assert len(g) == 11 and g[0] == 0.0 and g[-1] == 1.0
    assert np.allclose(np.diff(g), 0.1)
    with pytest.raises(ValueError):
        grid_times(0)
