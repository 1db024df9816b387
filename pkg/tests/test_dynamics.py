import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deep_limit_lab.dynamics import (
    ContinuousTrajectory,
    TrajectoryOverflowError,
    WeightVector,
    discrepancy_study,
    euler_forward,
    eval_field,
    grad_discrepancy_study,
    jacobians,
    ode_solve,
)


def random_weights(rng, dim=2, hidden=4, scale=0.6):
    m = 2 * dim * hidden + dim + hidden
    return WeightVector.from_flat(scale * rng.standard_normal(m) / np.sqrt(m), dim, hidden)


# ---------------------------------------------------------------------------
# weight container
# ---------------------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(
    dim=st.integers(1, 4),
    hidden=st.integers(1, 5),
    seed=st.integers(0, 2**31 - 1),
)
def test_flatten_unflatten_roundtrip_is_bit_exact(dim, hidden, seed):
    rng = np.random.default_rng(seed)
    m = 2 * dim * hidden + dim + hidden
    flat = rng.standard_normal(m)
    w = WeightVector.from_flat(flat, dim, hidden)
    assert np.array_equal(w.flat, flat)
    w2 = WeightVector.from_flat(w.flat, dim, hidden)
    assert np.array_equal(w2.flat, w.flat)


def test_weights_reject_nonfinite():
    with pytest.raises(ValueError):
        WeightVector.scalar(float("nan"))


def test_trajectories_are_immutable():
    traj = euler_forward(WeightVector.scalar(1.0), [1.0], 4, activation="relu")
    with pytest.raises(ValueError):
        traj.states[0] = 7.0


# ---------------------------------------------------------------------------
# field evaluation
# ---------------------------------------------------------------------------

def test_zero_outer_layer_gives_zero_field():
    w = WeightVector(np.zeros((2, 3)), np.ones((3, 2)), np.zeros(2), np.ones(3))
    rng = np.random.default_rng(0)
    for _ in range(5):
        assert np.all(eval_field(w, rng.standard_normal(2), "tanh") == 0.0)


def test_relu_identity_on_positives():
    w = WeightVector.scalar(1.0)
    assert eval_field(w, [1.0], "relu")[0] == 1.0


def test_scalar_tanh_direct_evaluation():
    # f(x) = 2 tanh(1 * 0.3 + 0.5) - 1, evaluated by hand
    w = WeightVector.scalar(2.0, 1.0, -1.0, 0.5)
    expected = 2.0 * math.tanh(0.8) - 1.0
    assert eval_field(w, [0.3], "tanh")[0] == pytest.approx(expected, abs=1e-15)


def test_dimension_mismatch_raises():
    w = WeightVector.zeros(2, 3)
    with pytest.raises(ValueError):
        eval_field(w, [1.0, 2.0, 3.0], "tanh")


# ---------------------------------------------------------------------------
# jacobians
# ---------------------------------------------------------------------------

def test_zero_outer_layer_gives_zero_state_jacobian():
    w = WeightVector(np.zeros((2, 3)), np.ones((3, 2)), np.zeros(2), np.zeros(3))
    dxf, _ = jacobians(w, [0.3, -0.2], "tanh")
    assert np.all(dxf == 0.0)


def test_scalar_tanh_state_jacobian_by_hand():
    w = WeightVector.scalar(2.0, 1.0, -1.0, 0.5)
    dxf, _ = jacobians(w, [0.3], "tanh")
    assert dxf[0, 0] == pytest.approx(2.0 * (1.0 - math.tanh(0.8) ** 2), abs=1e-15)


@pytest.mark.parametrize("activation", ["tanh", "swish"])
def test_jacobians_match_central_differences(activation):
    rng = np.random.default_rng(7)
    h = 1e-5
    for _ in range(5):
        w = random_weights(rng)
        x = rng.standard_normal(2)
        dxf, dtf = jacobians(w, x, activation)
        fd_x = np.empty_like(dxf)
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            fd_x[:, j] = (
                eval_field(w, x + e, activation) - eval_field(w, x - e, activation)
            ) / (2 * h)
        assert np.linalg.norm(dxf - fd_x) <= 1e-6 * max(1.0, np.linalg.norm(fd_x))
        m = w.n_params
        fd_t = np.empty((2, m))
        for j in range(m):
            e = np.zeros(m)
            e[j] = h
            wp = WeightVector.from_flat(w.flat + e, 2, 4)
            wm = WeightVector.from_flat(w.flat - e, 2, 4)
            fd_t[:, j] = (eval_field(wp, x, activation) - eval_field(wm, x, activation)) / (2 * h)
        assert np.linalg.norm(dtf - fd_t) <= 1e-6 * max(1.0, np.linalg.norm(fd_t))


# ---------------------------------------------------------------------------
# depth-N flow
# ---------------------------------------------------------------------------

def test_frozen_field_keeps_state_and_matches_direct_differentiation():
    w = WeightVector(np.zeros((2, 3)), 0.4 * np.ones((3, 2)), np.zeros(2), 0.1 * np.ones(3))
    traj = euler_forward(w, [1.0, 2.0], 4, with_sensitivity=True, activation="tanh")
    assert np.all(traj.states == np.array([1.0, 2.0]))
    # direct differentiation of the full scheme, coordinate by coordinate
    h = 1e-6
    m = w.n_params
    fd = np.empty((2, m))
    for j in range(m):
        e = np.zeros(m)
        e[j] = h
        wp = WeightVector.from_flat(w.flat + e, 2, 3)
        wm = WeightVector.from_flat(w.flat - e, 2, 3)
        fd[:, j] = (
            euler_forward(wp, [1.0, 2.0], 4, activation="tanh").final_state
            - euler_forward(wm, [1.0, 2.0], 4, activation="tanh").final_state
        ) / (2 * h)
    assert np.allclose(traj.final_sensitivity, fd, atol=1e-8)


def test_scalar_linear_closed_form():
    # f(x) = x through the relu net, so x_N = (1 + 1/N)^N
    traj = euler_forward(WeightVector.scalar(1.0), [1.0], 2, activation="relu")
    assert traj.final_state[0] == pytest.approx(2.25, abs=0.0)


def test_single_step_is_one_euler_update():
    rng = np.random.default_rng(3)
    w = random_weights(rng)
    x0 = rng.standard_normal(2)
    traj = euler_forward(w, x0, 1, activation="tanh")
    assert np.allclose(traj.final_state, x0 + eval_field(w, x0, "tanh"), atol=0.0)


def test_euler_recursion_invariant_holds_exactly():
    rng = np.random.default_rng(5)
    w = random_weights(rng)
    x0 = rng.standard_normal(2)
    traj = euler_forward(w, x0, 8, activation="tanh")
    for i in range(8):
        step = traj.states[i] + 0.125 * eval_field(w, traj.states[i], "tanh")
        assert np.array_equal(traj.states[i + 1], step)


def test_overflow_reports_step_index():
    with pytest.raises(TrajectoryOverflowError) as err:
        euler_forward(WeightVector.scalar(1e300), [1.0], 4, activation="relu")
    assert err.value.step == 2


def test_determinism_bitwise():
    rng = np.random.default_rng(9)
    w = random_weights(rng)
    x0 = rng.standard_normal(2)
    a = euler_forward(w, x0, 16, with_sensitivity=True, activation="tanh")
    b = euler_forward(w, x0, 16, with_sensitivity=True, activation="tanh")
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.sensitivities, b.sensitivities)


def test_sensitivity_recursion_matches_central_differences():
    rng = np.random.default_rng(11)
    w = random_weights(rng)
    x0 = rng.standard_normal(2)
    traj = euler_forward(w, x0, 32, with_sensitivity=True, activation="tanh")
    h = 1e-5
    m = w.n_params
    fd = np.empty((2, m))
    for j in range(m):
        e = np.zeros(m)
        e[j] = h
        wp = WeightVector.from_flat(w.flat + e, 2, 4)
        wm = WeightVector.from_flat(w.flat - e, 2, 4)
        fd[:, j] = (
            euler_forward(wp, x0, 32, activation="tanh").final_state
            - euler_forward(wm, x0, 32, activation="tanh").final_state
        ) / (2 * h)
    rel = np.linalg.norm(traj.final_sensitivity - fd) / np.linalg.norm(fd)
    assert rel <= 1e-6


# ---------------------------------------------------------------------------
# continuous reference
# ---------------------------------------------------------------------------

def test_reference_constant_for_zero_field():
    traj = ode_solve(WeightVector.zeros(2, 3), [0.5, -0.5], 256, activation="tanh")
    assert np.all(traj.states == np.array([0.5, -0.5]))


def test_reference_hits_e_for_linear_growth():
    traj = ode_solve(WeightVector.scalar(1.0), [1.0], 2**14, activation="relu")
    assert abs(traj.final_state[0] - math.e) <= 1e-10


def test_reference_hits_inverse_e_for_linear_decay():
    traj = ode_solve(WeightVector.scalar(-1.0), [1.0], 2**14, activation="relu")
    assert abs(traj.final_state[0] - math.exp(-1.0)) <= 1e-8


def test_time_grid_contract():
    traj = ode_solve(WeightVector.scalar(0.3), [1.0], 64, activation="tanh")
    assert isinstance(traj, ContinuousTrajectory)
    assert traj.time_grid[0] == 0.0 and traj.time_grid[-1] == 1.0
    assert np.all(np.diff(traj.time_grid) > 0)


def test_scalar_fast_path_agrees_with_batched_solver():
    from deep_limit_lab.dynamics import _rk4_flow

    w = WeightVector.scalar(0.8, 1.1, -0.2, 0.3)
    fast = ode_solve(w, [0.7], 128, activation="tanh").states[:, 0]
    xs, _ = _rk4_flow(w, np.array([[0.7]]), 128, "tanh", False, True)
    assert np.allclose(fast, xs[:, 0, 0], atol=1e-14)


# ---------------------------------------------------------------------------
# discrepancy studies
# ---------------------------------------------------------------------------

def test_zero_field_has_zero_discrepancy():
    tab = discrepancy_study(WeightVector.zeros(2, 2), [1.0, -1.0], [2, 4, 8], activation="tanh")
    assert all(g == 0.0 for g in tab.gaps)
    assert tab.slope is None


def test_closed_form_gap_at_depth_four():
    # max_i |e^{i/4} - 1.25^i| is attained at i = 4
    tab = discrepancy_study(WeightVector.scalar(1.0), [1.0], [4], activation="relu")
    assert abs(tab.gaps[0] - (math.e - 1.25**4)) <= 1e-12


def test_first_order_rate_of_euler_gap():
    tab = discrepancy_study(
        WeightVector.scalar(1.0), [1.0], [2**k for k in range(2, 11)], activation="relu"
    )
    assert tab.slope == pytest.approx(-1.0, abs=0.1)
    assert tab.envelope_ok


def test_gradient_gap_zero_at_frozen_origin():
    # all-zero weights and x0 = 0: both flows and both sensitivities coincide
    tab = grad_discrepancy_study(WeightVector.zeros(1, 1), [0.0], [2, 4, 8], activation="tanh")
    assert all(g == 0.0 for g in tab.gaps)


def test_gradient_gap_closed_form_coordinate():
    # d/da (1 + a/N)^N at a=1 equals (1 + 1/N)^(N-1); continuous d/da e^a = e
    w = WeightVector.scalar(1.0)
    disc = euler_forward(w, [1.0], 4, with_sensitivity=True, activation="relu")
    assert disc.final_sensitivity[0, 0] == pytest.approx(1.25**3, abs=0.0)
    cont = ode_solve(w, [1.0], 2**14, with_sensitivity=True, activation="relu")
    assert cont.final_sensitivity[0, 0] == pytest.approx(math.e, abs=1e-9)


def test_first_order_rate_of_gradient_gap():
    tab = grad_discrepancy_study(
        WeightVector.scalar(1.0), [1.0], [2**k for k in range(2, 11)], activation="relu"
    )
    assert tab.slope == pytest.approx(-1.0, abs=0.15)


# ---------------------------------------------------------------------------
# curvature (second derivatives probed through the sensitivity recursion)
# ---------------------------------------------------------------------------

def test_relu_is_flagged_first_order_only():
    from deep_limit_lab.dynamics import VectorFieldSpec

    assert VectorFieldSpec("relu", 2, 4).first_order_only
    assert not VectorFieldSpec("tanh", 2, 4).first_order_only
    assert not VectorFieldSpec("swish", 2, 4).first_order_only


def test_flow_curvature_via_differenced_sensitivities():
    # directional second derivative two ways: differencing the sensitivity
    # recursion along u versus second differences of the state itself
    rng = np.random.default_rng(21)
    w = random_weights(rng)
    x0 = rng.standard_normal(2)
    m = w.n_params
    h = 1e-4
    for _ in range(3):
        u = rng.standard_normal(m)
        u /= np.linalg.norm(u)
        wp = WeightVector.from_flat(w.flat + h * u, 2, 4)
        wm = WeightVector.from_flat(w.flat - h * u, 2, 4)
        sp = euler_forward(wp, x0, 16, with_sensitivity=True, activation="tanh").final_sensitivity
        sm = euler_forward(wm, x0, 16, with_sensitivity=True, activation="tanh").final_sensitivity
        from_sens = ((sp - sm) / (2 * h)) @ u
        xp = euler_forward(wp, x0, 16, activation="tanh").final_state
        xm = euler_forward(wm, x0, 16, activation="tanh").final_state
        x0v = euler_forward(w, x0, 16, activation="tanh").final_state
        from_state = (xp - 2 * x0v + xm) / h**2
        assert np.linalg.norm(from_sens - from_state) <= 1e-4 * max(
            1.0, np.linalg.norm(from_state)
        )
