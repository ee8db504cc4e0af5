import numpy as np
import pytest

from drcvar_nav.dynamics import (
    GimbalLockError,
    LinearAgentModel,
    QuadrotorParams,
    double_integrator_step,
    quadrotor_rhs,
    rk4_step,
)

PAR = QuadrotorParams()


def hover():
    return np.zeros(12), PAR.hover_input


def test_transition_matrices_closed_form():
    dt = 0.1
    m = LinearAgentModel(dt)
    Ad = np.eye(6)
    Ad[:3, 3:] = dt * np.eye(3)
    Bd = np.vstack([dt**2 / 2 * np.eye(3), dt * np.eye(3)])
    np.testing.assert_allclose(m.Ad, Ad, atol=1e-12, rtol=0)
    np.testing.assert_allclose(m.Bd, Bd, atol=1e-12, rtol=0)


def test_invalid_model():
    with pytest.raises(ValueError):
        LinearAgentModel(0.0)
    with pytest.raises(ValueError):
        LinearAgentModel(0.1, a_max=-1)


def test_double_integrator_examples():
    m = LinearAgentModel(0.1)
    x = double_integrator_step(m, [0, 0, 0, 1, 0, 0], np.zeros(3))
    np.testing.assert_allclose(x, [0.1, 0, 0, 1, 0, 0])
    x = np.zeros(6)
    for _ in range(10):
        x = double_integrator_step(m, x, [0, 0, -9.81])
    assert x[5] == pytest.approx(-9.81)
    assert x[2] == pytest.approx(-0.5 * 9.81)


def test_rollout_matches_matrices(rng):
    m = LinearAgentModel(0.1)
    u = rng.normal(size=(15, 3))
    x0 = rng.normal(size=6)
    traj = m.rollout(x0, u)
    x = x0
    for k in range(15):
        x = m.Ad @ x + m.Bd @ u[k]
        np.testing.assert_allclose(traj[k], x, atol=1e-12)


def test_hover_equilibrium():
    x, u = hover()
    assert np.all(quadrotor_rhs(x, u, PAR) == 0.0)


def test_free_fall():
    d = quadrotor_rhs(np.zeros(12), np.zeros(4), PAR)
    assert d[5] == -PAR.g
    assert np.all(d[[3, 4]] == 0) and np.all(d[6:] == 0)


def test_yaw_moment():
    d = quadrotor_rhs(np.zeros(12), [PAR.m * PAR.g, 0, 0, 0.3], PAR)
    assert d[11] == pytest.approx(0.3 / PAR.Izz)


def test_thrust_direction_terms():
    x = np.zeros(12)
    x[6:9] = [0.1, 0.2, 0.3]
    phi, th, psi = x[6:9]
    d = quadrotor_rhs(x, [10.0, 0, 0, 0], PAR)
    c, s = np.cos, np.sin
    assert d[3] == pytest.approx((c(psi) * s(th) + c(th) * s(phi) * s(psi)) * 10 / PAR.m)
    assert d[4] == pytest.approx((s(psi) * s(th) - c(th) * s(phi) * c(psi)) * 10 / PAR.m)


def test_translation_invariance(rng):
    x = rng.normal(size=12) * 0.3
    u = rng.normal(size=4) + [PAR.m * PAR.g, 0, 0, 0]
    y = x.copy()
    y[:3] += rng.normal(size=3) * 10
    np.testing.assert_array_equal(quadrotor_rhs(x, u)[3:], quadrotor_rhs(y, u)[3:])


def test_gimbal_guard():
    x = np.zeros(12)
    x[6] = np.pi / 2
    with pytest.raises(GimbalLockError):
        quadrotor_rhs(x, PAR.hover_input)
    with pytest.raises(ValueError):
        QuadrotorParams(m=0)


def test_rk4_exponential():
    y = rk4_step(lambda x, u: x, np.array([1.0]), None, 0.01)
    assert y[0] == pytest.approx(np.exp(0.01), abs=1e-10)


def test_rk4_constant_field():
    y = rk4_step(lambda x, u: np.array([2.0, -1.0]), np.zeros(2), None, 0.5)
    np.testing.assert_allclose(y, [1.0, -0.5], atol=1e-15)
    with pytest.raises(ValueError):
        rk4_step(lambda x, u: x, np.zeros(1), None, 0.0)


def test_rk4_hover_unchanged():
    x, u = hover()
    for _ in range(100):
        x = rk4_step(lambda s, a: quadrotor_rhs(s, a, PAR), x, u, 1e-3)
    assert np.all(x == 0.0)
