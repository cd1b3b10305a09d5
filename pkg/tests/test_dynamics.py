import numpy as np
import pytest
from scipy.integrate import solve_ivp

from lanefree.dynamics import (ControlInput, SpeedFloorError, StateBounds,
                               VehicleParams, VehicleState, check_limits,
                               state_rate, state_rate_jacobians,
                               stability_derivatives)


def force_balance_rate(state, control, params):
    """Independent oracle: slip-angle tire forces and a direct force balance."""
    r, beta, v, x, y, theta = state
    a, delta = control
    alpha_f = delta - beta - params.lf * r / v
    alpha_r = -beta + params.lr * r / v
    fyf = params.cf * alpha_f
    fyr = params.cr * alpha_r
    return np.array([
        (params.lf * fyf - params.lr * fyr) / params.inertia_z,
        (fyf + fyr) / (params.mass * v) - r,
        a,
        v * np.cos(theta),
        v * np.sin(theta),
        r,
    ])


def rate_of(state_vec, control_vec, params):
    d = stability_derivatives(params)
    return state_rate(VehicleState.from_array(state_vec),
                      ControlInput(*control_vec), d, params)


def test_stability_derivative_closed_forms():
    p = VehicleParams(cf=50000.0, cr=50000.0, lf=1.0, lr=1.5)
    d = stability_derivatives(p)
    assert d.y_beta == -100000.0
    assert d.y_r == 25000.0
    assert d.n_r == -162500.0
    assert d.n_beta == 25000.0
    assert d.n_delta == 50000.0
    assert d.y_delta == 50000.0


def test_neutral_steer_symmetry():
    p = VehicleParams(cf=40000.0, cr=40000.0, lf=1.3, lr=1.3, body_length=4.0)
    d = stability_derivatives(p)
    assert d.y_r == 0.0
    assert d.n_beta == 0.0


@pytest.mark.parametrize("params", [
    VehicleParams(),
    VehicleParams(mass=1100.0, inertia_z=1800.0, lf=0.9, lr=1.4,
                  cf=42000.0, cr=61000.0, body_length=4.2, body_width=1.8),
])
def test_derivative_signs(params):
    d = stability_derivatives(params)
    assert d.y_beta < 0.0
    assert d.n_r < 0.0
    assert d.n_delta > 0.0
    assert d.y_delta > 0.0


def test_straight_coasting_rate():
    rate = rate_of([0, 0, 10.0, 0, 0, 0], [0, 0], VehicleParams())
    np.testing.assert_allclose(rate, [0, 0, 0, 10.0, 0, 0], atol=1e-15)


def test_heading_alignment_rate():
    rate = rate_of([0, 0, 10.0, 0, 0, np.pi / 2], [2.0, 0], VehicleParams())
    np.testing.assert_allclose(rate, [0, 0, 2.0, 0, 10.0, 0], atol=1e-14)


def test_rate_matches_force_balance_oracle():
    rng = np.random.default_rng(7)
    params = VehicleParams()
    for _ in range(200):
        state = np.array([rng.uniform(-0.7, 0.7), rng.uniform(-0.5, 0.5),
                          rng.uniform(2.0, 25.0), rng.uniform(-40, 40),
                          rng.uniform(-40, 40), rng.uniform(-np.pi, np.pi)])
        control = np.array([rng.uniform(-3, 3), rng.uniform(-0.67, 0.67)])
        got = rate_of(state, control, params)
        want = force_balance_rate(state, control, params)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_speed_floor_raises():
    with pytest.raises(SpeedFloorError):
        rate_of([0, 0, 0.0, 0, 0, 0], [0, 0], VehicleParams())


def test_jacobians_match_central_differences():
    rng = np.random.default_rng(11)
    params = VehicleParams()
    d = stability_derivatives(params)
    h = 1e-6
    worst = 0.0
    for _ in range(100):
        s = np.array([rng.uniform(-0.7, 0.7), rng.uniform(-0.5, 0.5),
                      rng.uniform(2.0, 25.0), rng.uniform(-40, 40),
                      rng.uniform(-40, 40), rng.uniform(-np.pi, np.pi)])
        u = np.array([rng.uniform(-3, 3), rng.uniform(-0.67, 0.67)])
        jx, ju = state_rate_jacobians(VehicleState.from_array(s),
                                      ControlInput(*u), d, params)
        assert jx[3, 2] == pytest.approx(np.cos(s[5]))
        assert jx[4, 2] == pytest.approx(np.sin(s[5]))
        assert ju[2, 0] == 1.0
        for k in range(6):
            sp, sm = s.copy(), s.copy()
            sp[k] += h
            sm[k] -= h
            col = (rate_of(sp, u, params) - rate_of(sm, u, params)) / (2 * h)
            err = np.abs(col - jx[:, k]) / np.maximum(1.0, np.abs(jx[:, k]))
            worst = max(worst, err.max())
        for k in range(2):
            up, um = u.copy(), u.copy()
            up[k] += h
            um[k] -= h
            col = (rate_of(s, up, params) - rate_of(s, um, params)) / (2 * h)
            err = np.abs(col - ju[:, k]) / np.maximum(1.0, np.abs(ju[:, k]))
            worst = max(worst, err.max())
    assert worst <= 1e-6


def test_straight_line_analytic_solution():
    params = VehicleParams()
    d = stability_derivatives(params)
    v0, a, theta0 = 10.0, 1.5, 0.3
    x0 = np.array([0.0, 0.0, v0, 1.0, -2.0, theta0])

    def rhs(_, s):
        return rate_of(s, [a, 0.0], params)

    sol = solve_ivp(rhs, (0.0, 4.0), x0, rtol=1e-11, atol=1e-12,
                    dense_output=True)
    t = 4.0
    dist = v0 * t + 0.5 * a * t * t
    final = sol.y[:, -1]
    np.testing.assert_allclose(final[0], 0.0, atol=1e-9)
    np.testing.assert_allclose(final[1], 0.0, atol=1e-9)
    np.testing.assert_allclose(final[3], 1.0 + dist * np.cos(theta0), atol=1e-7)
    np.testing.assert_allclose(final[4], -2.0 + dist * np.sin(theta0), atol=1e-7)


def test_rotational_equivariance():
    params = VehicleParams()
    base = np.array([0.2, -0.1, 12.0, 3.0, 4.0, 0.5])
    control = np.array([1.0, 0.1])
    phi = 0.77
    rot = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
    rate0 = rate_of(base, control, params)
    rotated = base.copy()
    rotated[5] += phi
    rate1 = rate_of(rotated, control, params)
    np.testing.assert_allclose(rate1[[0, 1, 2, 5]], rate0[[0, 1, 2, 5]],
                               rtol=1e-12)
    np.testing.assert_allclose(rate1[3:5], rot @ rate0[3:5], rtol=1e-12)


def test_speed_scaling_changes_yaw_rate_derivative():
    params = VehicleParams()
    probe = np.array([0.3, 0.1, 8.0, 0.0, 0.0, 0.0])
    control = np.array([0.0, 0.05])
    r1 = rate_of(probe, control, params)
    scaled = probe.copy()
    scaled[2] *= 2.0
    r2 = rate_of(scaled, control, params)
    assert r2[0] != pytest.approx(r1[0])
    assert r2[0] != pytest.approx(2.0 * r1[0])


def test_limits_boundary_is_feasible():
    bounds = StateBounds()
    state = VehicleState(r=0.7, beta=0.5, v=25.0, x=0, y=0, theta=0)
    control = ControlInput(accel=3.0, steer=0.67)
    assert check_limits(state, control, bounds) == []


def test_limits_single_violation_margin():
    bounds = StateBounds()
    state = VehicleState(r=0, beta=0, v=26.0, x=0, y=0, theta=0)
    report = check_limits(state, ControlInput(0.0, 0.0), bounds)
    assert len(report) == 1
    assert report[0].quantity == "V_max"
    assert report[0].margin == pytest.approx(1.0)


def test_limits_nominal_state_clean():
    report = check_limits(VehicleState(0, 0, 10.0, 0, 0, 0),
                          ControlInput(0.0, 0.0), StateBounds())
    assert report == []


def test_invalid_params_rejected():
    with pytest.raises(ValueError):
        VehicleParams(mass=-1.0)
    with pytest.raises(ValueError):
        VehicleParams(lf=2.5, lr=2.5, body_length=4.6)
    with pytest.raises(ValueError):
        StateBounds(v_min=0.0)
