import numpy as np
import pytest

from deep_limit_lab.sgd_sde import (
    InitDistribution,
    NoiseModel,
    coupled_run,
    euler_maruyama,
    gaussian_increments,
    mc_statistics,
)
from deep_limit_lab.toy import ScalarToyModel, default_toy_model


def test_zero_noise_gradient_flow_matches_linear_decay():
    # drift = grad |th|^2 = 2 th, so theta_t = theta_0 e^{-2t} up to O(h)
    h = 1.0 / 4096
    path = euler_maruyama(lambda th: 2.0 * th, NoiseModel.zero(1), [1.0], 1.0, h, seed=0)
    assert abs(path.final[0] - np.exp(-2.0)) <= 10.0 * h


def test_pure_diffusion_variance_matches_brownian_law():
    # theta_T = sqrt(2) W_T, so Var = 2T regardless of the step size
    T, h, n = 0.25, 1.0 / 128, 4000
    nm = NoiseModel.default(1)
    finals = np.array(
        [
            euler_maruyama(lambda th: 0.0 * th, nm, [0.0], T, h, seed=3, stream=k).final[0]
            for k in range(n)
        ]
    )
    var = finals.var(ddof=1)
    se = 2.0 * T * np.sqrt(2.0 / (n - 1))
    assert abs(var - 2.0 * T) <= 3.0 * se


def test_same_seed_gives_bit_identical_paths():
    nm = NoiseModel.default(2)
    a = euler_maruyama(lambda th: th, nm, [0.2, -0.1], 0.5, 1.0 / 512, seed=9)
    b = euler_maruyama(lambda th: th, nm, [0.2, -0.1], 0.5, 1.0 / 512, seed=9)
    assert np.array_equal(a.theta, b.theta)


def test_noise_stream_is_independent_of_the_drift():
    # coupling validity: the same (seed, stream) always yields the same block
    a = gaussian_increments(5, 2, 64, 1)
    b = gaussian_increments(5, 2, 64, 1)
    c = gaussian_increments(5, 3, 64, 1)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_full_rank_check():
    with pytest.raises(ValueError):
        NoiseModel(np.array([[1.0, 0.0], [1.0, 0.0]]))


def test_init_distribution_is_compactly_supported():
    rng = np.random.default_rng(0)
    ball = InitDistribution("uniform_ball", radius=0.7)
    pts = ball.sample(3, rng, size=500)
    assert np.all(np.linalg.norm(pts, axis=1) <= 0.7 + 1e-12)
    box = InitDistribution("uniform_box", radius=0.7)
    pts = box.sample(2, rng, size=500)
    assert np.all(np.abs(pts) <= 0.7 + 1e-12)


def test_coupled_run_with_identical_drifts_is_exactly_tied():
    # frozen data (x = 0) makes the data term constant, so both drifts equal
    # the penalty drift and the coupled pair never separates
    toy = ScalarToyModel(np.zeros(8), np.ones(8))
    grid = np.linspace(-4, 4, 513)
    _, dc = toy.drift_table(grid, None)
    _, dn = toy.drift_table(grid, 4)
    assert np.array_equal(dc, dn)
    drift_c = lambda th: -np.interp(th, grid, -dc)
    drift_n = lambda th: -np.interp(th, grid, -dn)
    _, _, sup = coupled_run(
        drift_c, drift_n, NoiseModel.default(1), InitDistribution(radius=0.5),
        T=0.5, h=1.0 / 256, seed=11,
    )
    assert sup == 0.0


def test_depth_equal_to_oracle_sits_at_the_noise_floor():
    toy = default_toy_model(n_data=16)
    tab = mc_statistics(toy, [1024], n_seeds=40, T=0.5, h=1.0 / 512, seed=13)
    rows = tab.by_statistic("mean_gap")
    # the depth-1024 Euler flow is within O(1/1024) of the reference
    assert rows[0][1] <= 5e-4


def test_constant_test_function_has_exactly_zero_weak_error():
    toy = default_toy_model(n_data=16)
    tab = mc_statistics(
        toy, [4], n_seeds=30, T=0.5, h=1.0 / 512, seed=17, poly_tests=((0.0, 1.0),)
    )
    rows = tab.by_statistic("weak_poly_0")
    assert rows[0][1] == 0.0


def test_zero_noise_estimators_have_zero_variance():
    toy = default_toy_model(n_data=16)
    grid = np.linspace(-4, 4, 1025)
    _, drift = toy.drift_table(grid, None)
    nm = NoiseModel.zero(1)
    finals = [
        euler_maruyama(
            lambda th: -np.interp(th, grid, drift), nm, [0.3], 0.5, 1.0 / 256, seed=1, stream=k
        ).final[0]
        for k in range(5)
    ]
    assert np.ptp(finals) == 0.0


def test_mc_standard_error_scales_with_seed_count():
    toy = default_toy_model(n_data=16)
    t100 = mc_statistics(toy, [8], n_seeds=100, T=0.5, h=1.0 / 512, seed=23)
    t400 = mc_statistics(toy, [8], n_seeds=400, T=0.5, h=1.0 / 512, seed=23)
    se100 = t100.by_statistic("sup_sq")[0][2]
    se400 = t400.by_statistic("sup_sq")[0][2]
    assert 0.3 <= se400 / se100 <= 0.75  # expect about 1/2


def test_sup_gap_square_decreases_with_depth():
    toy = default_toy_model(n_data=16)
    tab = mc_statistics(toy, [2, 8, 32], n_seeds=60, T=0.5, h=1.0 / 512, seed=29)
    rows = tab.by_statistic("sup_sq")
    for (n1, e1, s1), (n2, e2, s2) in zip(rows, rows[1:]):
        assert e2 <= e1 + 2.0 * np.hypot(s1, s2)
    assert tab.slopes["sup_sq"][0] < -1.0
