import numpy as np
import pytest

from deep_limit_lab.toy import ScalarToyModel, default_toy_model


def test_potential_derivative_matches_finite_differences():
    toy = default_toy_model(n_data=16)
    grid = np.array([-3.0, -1.2, 0.0, 0.4, 0.9, 1.7, 2.6, 5.0])
    h = 1e-6
    for n_steps in (None, 8):
        _, dv = toy.potential(grid, n_steps)
        vp, _ = toy.potential(grid + h, n_steps)
        vm, _ = toy.potential(grid - h, n_steps)
        fd = (vp - vm) / (2 * h)
        assert np.max(np.abs(dv - fd)) <= 1e-5 * max(1.0, np.max(np.abs(fd)))


def test_self_consistent_dataset_has_its_minimum_at_theta_star():
    toy = default_toy_model(theta_star=0.6)
    grid = np.linspace(-2, 2, 2001)
    v, _ = toy.potential(grid, None)
    assert grid[np.argmin(v)] == pytest.approx(0.6, abs=2e-3)
    assert v.min() <= 1e-6


def test_data_term_frozen_beyond_twice_cap():
    toy = default_toy_model(cap=1.0, gamma=0.3)
    thetas = np.array([2.5, 4.0, 7.0])
    v, _ = toy.potential(thetas, 16)
    from deep_limit_lab.risk import penalty_profile

    h_vals, _ = penalty_profile(thetas, toy.regularizer)
    data_term = v - toy.gamma * h_vals
    assert np.ptp(data_term) <= 1e-12


def test_quadratic_growth_at_infinity():
    toy = default_toy_model(gamma=0.5, lam=1.0)
    v8, _ = toy.potential(np.array([8.0]), None)
    v4, _ = toy.potential(np.array([4.0]), None)
    # beyond the clamp the potential is data-const + gamma * lam * theta^2
    assert (v8[0] - v4[0]) == pytest.approx(0.5 * (64.0 - 16.0), rel=1e-10)


def test_depth_table_converges_to_continuous_table():
    toy = default_toy_model(n_data=16)
    grid = np.linspace(-2, 2, 101)
    v_c, _ = toy.potential(grid, None)
    gaps = []
    for n in (4, 16, 64):
        v_n, _ = toy.potential(grid, n)
        gaps.append(np.max(np.abs(v_n - v_c)))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] <= gaps[0] / 8.0


def test_relu_variant_and_validation():
    toy = ScalarToyModel(np.array([0.5, 1.0]), np.array([0.7, 1.2]), activation="relu")
    v, dv = toy.potential(np.array([0.3]), 4)
    assert np.isfinite(v).all() and np.isfinite(dv).all()
    with pytest.raises(ValueError):
        ScalarToyModel(np.ones((2, 2)), np.ones((2, 2)))
