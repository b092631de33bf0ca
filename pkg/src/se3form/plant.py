"""Ground-truth rigid-body dynamics, disturbances, and sensor noise.

Everything in here is deliberately invisible to the controller: masses,
inertias, Coriolis structure, gravity, the disturbance signal, and the
velocity-measurement noise.  The control law in :mod:`controller` must work
without any of it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SingularInertia, ValidationError
from .se3 import cross3, rot_apply, rot_t_apply, skew

INERTIA_MIN_EIG = 1e-12


@dataclass(frozen=True)
class RigidBodyParams:
    """Mass (kg), inertia (kg m^2), body radius and sensing radius (m)."""

    mass: float
    inertia: np.ndarray  # (3, 3) symmetric positive definite
    radius: float
    sensing_radius: float
    gravity_vec: np.ndarray = field(default_factory=lambda: np.zeros(3))  # world frame, m/s^2

    def __post_init__(self):
        if self.mass <= 0.0:
            raise ValidationError(f"mass must be positive, got {self.mass}")
        J = np.asarray(self.inertia, dtype=np.float64)
        if J.shape != (3, 3) or np.max(np.abs(J - J.T)) > 1e-12:
            raise SingularInertia(f"inertia must be symmetric 3x3, got\n{J!r}")
        eigs = np.linalg.eigvalsh(J)
        if eigs[0] < INERTIA_MIN_EIG:
            raise SingularInertia(
                f"inertia min eigenvalue {eigs[0]:.3e} below {INERTIA_MIN_EIG:.0e}"
            )
        if self.radius <= 0.0 or self.sensing_radius <= 0.0:
            raise ValidationError("radius and sensing_radius must be positive")


@dataclass(frozen=True)
class DisturbanceModel:
    """w = A sin(|p1|_1 tr(R) omega t + phi) v, a bounded velocity-scaled wrench."""

    amplitude: float
    omega: float
    phi: float


@dataclass(frozen=True)
class NoiseModel:
    """n = A sin(|p1|_1 tr(R) omega t + phi) v added to the velocity feedback."""

    amplitude: float
    omega: float
    phi: float


def coriolis(params: RigidBodyParams, v) -> np.ndarray:
    """Body-frame cross-term matrix C(v) = blkdiag(m S(w), -S(J w)).

    C(v) v reproduces m w x v_L and w x (J w); the skew structure makes the
    cross terms workless (v^T C(v) v = 0).
    """
    v = np.asarray(v, dtype=np.float64)
    w = v[3:6]
    C = np.zeros((6, 6), dtype=np.float64)
    C[:3, :3] = params.mass * skew(w)
    C[3:, 3:] = -skew(np.asarray(params.inertia, dtype=np.float64) @ w)
    return C


def gravity_wrench(params: RigidBodyParams, R) -> np.ndarray:
    """Body-frame gravity (m R^T g_world, 0); norm never exceeds m |g_world|."""
    out = np.zeros(6, dtype=np.float64)
    out[:3] = params.mass * rot_t_apply(np.asarray(R, dtype=np.float64), params.gravity_vec)
    return out


def _modulation(amplitude, omega, phi, p1, R, t):
    """A sin(|p1|_1 tr(R) omega t + phi), broadcastable over agents."""
    p1_norm1 = (np.abs(p1[0]) + np.abs(p1[1])) + np.abs(p1[2])
    tr = (R[..., 0, 0] + R[..., 1, 1]) + R[..., 2, 2]
    return amplitude * np.sin(p1_norm1 * tr * omega * t + phi)


def disturbance(model: DisturbanceModel, p1, R, v, t: float) -> np.ndarray:
    """Exogenous wrench; scales with the agent's own velocity, so it vanishes
    at rest and stays bounded on bounded trajectories."""
    v = np.asarray(v, dtype=np.float64)
    return _modulation(model.amplitude, model.omega, model.phi, np.asarray(p1), np.asarray(R), t) * v


def measured_velocity(model: NoiseModel, p1, R, v, t: float) -> np.ndarray:
    """Noisy feedback vtilde = v + n the controller receives."""
    v = np.asarray(v, dtype=np.float64)
    return v + _modulation(model.amplitude, model.omega, model.phi, np.asarray(p1), np.asarray(R), t) * v


def acceleration(params: RigidBodyParams, v, u, w, R) -> np.ndarray:
    """Solve u = M vdot + C(v)v + g(x) + w for vdot.

    M = blkdiag(m I, J) is constant, so the solve splits into a scalar
    division and a 3x3 solve against the cached inertia inverse.
    """
    v = np.asarray(v, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    J = np.asarray(params.inertia, dtype=np.float64)
    g = gravity_wrench(params, R)
    vdot = np.empty(6, dtype=np.float64)
    wb = v[3:6]
    vdot[:3] = (u[:3] - params.mass * cross3(wb, v[:3]) - g[:3] - w[:3]) / params.mass
    vdot[3:] = np.linalg.solve(J, u[3:] - cross3(wb, J @ wb) - g[3:] - w[3:])
    return vdot


def batched_acceleration(mass, inertia, inertia_inv, R, v, u, w, gravity_vec):
    """Vectorized acceleration for all agents at once.

    mass (N,), inertia/inertia_inv (N,3,3), R (N,3,3), v/u/w (N,6),
    gravity_vec (N,3) or None when all-zero.  Same force balance as
    :func:`acceleration`.
    """
    vL, wb = v[:, :3], v[:, 3:]
    Jw = rot_apply(inertia, wb)
    vdot = np.empty_like(v)
    lin = u[:, :3] - mass[:, None] * cross3(wb, vL) - w[:, :3]
    if gravity_vec is not None:
        lin -= mass[:, None] * rot_t_apply(R, gravity_vec)
    vdot[:, :3] = lin / mass[:, None]
    vdot[:, 3:] = rot_apply(inertia_inv, u[:, 3:] - cross3(wb, Jw) - w[:, 3:])
    return vdot
