"""Agent motion models.

The planner uses a discrete double integrator (position, velocity; input is
acceleration).  The 12-state quadrotor ODE is a forward model for open-loop
validation only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GIMBAL_MARGIN = 1e-6


class GimbalLockError(ValueError):
    """Roll angle too close to +-pi/2 for the Euler-rate map."""


@dataclass(frozen=True)
class LinearAgentModel:
    """Double integrator ``p' = p + v dt + a dt^2 / 2``, ``v' = v + a dt``.

    State is ``(p, v)`` in R^6 and input is the acceleration in R^3.  Bounds
    are per-axis: ``|a_k| <= a_max`` and ``|v_k| <= v_max``.
    """

    dt: float = 0.1
    a_max: float = 2.0
    v_max: float = 2.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not (self.a_max > 0 and self.v_max > 0):
            raise ValueError("a_max and v_max must be positive")

    @property
    def Ad(self) -> np.ndarray:
        return np.block([[np.eye(3), self.dt * np.eye(3)], [np.zeros((3, 3)), np.eye(3)]])

    @property
    def Bd(self) -> np.ndarray:
        return np.vstack([0.5 * self.dt**2 * np.eye(3), self.dt * np.eye(3)])

    def rollout(self, x0, inputs) -> np.ndarray:
        """States ``x(1..T)`` (shape (T, 6)) under inputs of shape (T, 3)."""
        x = np.asarray(x0, dtype=float).reshape(6)
        inputs = np.asarray(inputs, dtype=float).reshape(-1, 3)
        out = np.empty((inputs.shape[0], 6))
        for k, u in enumerate(inputs):
            x = double_integrator_step(self, x, u)
            out[k] = x
        return out


def double_integrator_step(model: LinearAgentModel, state, accel) -> np.ndarray:
    state = np.asarray(state, dtype=float).reshape(6)
    a = np.asarray(accel, dtype=float).reshape(3)
    p, v = state[:3], state[3:]
    dt = model.dt
    return np.concatenate([p + v * dt + 0.5 * a * dt * dt, v + a * dt])


@dataclass(frozen=True)
class QuadrotorParams:
    m: float = 1.5
    g: float = 9.81
    Ixx: float = 0.0347
    Iyy: float = 0.0459
    Izz: float = 0.0977

    def __post_init__(self):
        if min(self.m, self.g, self.Ixx, self.Iyy, self.Izz) <= 0:
            raise ValueError(f"quadrotor parameters must be positive: {self}")

    @property
    def hover_input(self) -> np.ndarray:
        return np.array([self.m * self.g, 0.0, 0.0, 0.0])


def quadrotor_rhs(state, u, params: QuadrotorParams = QuadrotorParams()) -> np.ndarray:
    """Time derivative of the 12-state quadrotor.

    State: position (x, y, z), velocity, Euler angles (phi, theta, psi),
    body rates (p, q, r).  Input: thrust and the three body moments.
    """
    x = np.asarray(state, dtype=float).reshape(12)
    u1, u2, u3, u4 = np.asarray(u, dtype=float).reshape(4)
    phi, th, psi = x[6:9]
    p, q, r = x[9:12]
    if abs(phi) >= np.pi / 2 - GIMBAL_MARGIN:
        raise GimbalLockError(f"roll angle {phi:.6f} too close to +-pi/2")
    m, g = params.m, params.g
    Ixx, Iyy, Izz = params.Ixx, params.Iyy, params.Izz
    cphi, sphi = np.cos(phi), np.sin(phi)
    cth, sth = np.cos(th), np.sin(th)
    cpsi, spsi = np.cos(psi), np.sin(psi)

    d = np.empty(12)
    d[0:3] = x[3:6]
    d[3] = (cpsi * sth + cth * sphi * spsi) * u1 / m
    d[4] = (spsi * sth - cth * sphi * cpsi) * u1 / m
    d[5] = (cphi * cth) * u1 / m - g
    d[6] = p * cth + r * sth
    d[7] = p * (sth * sphi / cphi) + q - r * (cth * sphi / cphi)
    d[8] = -p * (sth / cphi) + r * (cth / cphi)
    d[9] = (u2 - (Izz - Iyy) * q * r) / Ixx
    d[10] = (u3 - (Ixx - Izz) * p * r) / Iyy
    d[11] = (u4 - (Iyy - Ixx) * p * q) / Izz
    return d


def rk4_step(rhs, state, u, dt: float) -> np.ndarray:
    """Classical Runge-Kutta step with the input held constant over ``dt``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = np.asarray(state, dtype=float)
    k1 = rhs(x, u)
    k2 = rhs(x + 0.5 * dt * k1, u)
    k3 = rhs(x + 0.5 * dt * k2, u)
    k4 = rhs(x + dt * k3, u)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
