"""Rigid-body dynamics, disturbance, and noise-model tests."""

from __future__ import annotations

import numpy as np
import pytest

from se3form.errors import SingularInertia, ValidationError
from se3form.plant import (
    DisturbanceModel,
    NoiseModel,
    RigidBodyParams,
    acceleration,
    batched_acceleration,
    coriolis,
    disturbance,
    gravity_wrench,
    measured_velocity,
)
from se3form.se3 import random_rotation


def body(mass=1.0, inertia=None, gravity=(0.0, 0.0, 0.0)):
    return RigidBodyParams(
        mass=mass,
        inertia=np.eye(3) if inertia is None else np.asarray(inertia, dtype=float),
        radius=1.0,
        sensing_radius=4.0,
        gravity_vec=np.asarray(gravity, dtype=float),
    )


def test_params_validation():
    with pytest.raises(ValidationError):
        body(mass=0.0)
    with pytest.raises(SingularInertia):
        body(inertia=np.diag([1.0, 1.0, 0.0]))
    with pytest.raises(SingularInertia):
        body(inertia=[[1, 0.5, 0], [0, 1, 0], [0, 0, 1]])  # not symmetric


def test_coriolis_zero_omega():
    v = np.array([1.0, 2.0, 3.0, 0.0, 0.0, 0.0])
    assert np.array_equal(coriolis(body(), v) @ v, np.zeros(6))


def test_coriolis_cross_term():
    v = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 1.0])
    Cv = coriolis(body(), v) @ v
    np.testing.assert_allclose(Cv[:3], np.cross([0, 0, 1], [1, 0, 0]), atol=1e-15)
    np.testing.assert_allclose(Cv[:3], [0.0, 1.0, 0.0], atol=1e-15)


def test_coriolis_is_workless():
    rng = np.random.default_rng(3)
    for _ in range(100):
        b = body(mass=rng.uniform(0.1, 2), inertia=np.diag(rng.uniform(0.1, 2, 3)))
        v = rng.standard_normal(6)
        assert abs(v @ (coriolis(b, v) @ v)) <= 1e-12 * (1 + v @ v) ** 2


def test_energy_rate_equals_input_power():
    # d/dt (v^T M v / 2) = v^T u when gravity and disturbance vanish; the
    # skew cross terms do no work.  Integrate a short forced trajectory and
    # compare the kinetic-energy change against Simpson quadrature of v^T u.
    b = body(mass=0.7, inertia=np.diag([0.4, 0.8, 1.3]))
    M = np.diag([0.7] * 3 + [0.4, 0.8, 1.3])

    def u_of_t(t):
        return np.array(
            [np.sin(3 * t), 0.2, -np.cos(2 * t), 0.1 * np.sin(t), -0.3, 0.25 * np.cos(3 * t)]
        )

    dt = 1e-4
    n = 2000
    v = np.array([0.3, -0.1, 0.2, 0.8, -0.5, 0.4])
    R = np.eye(3)
    samples = [v @ u_of_t(0.0)]
    for i in range(n):
        t = i * dt

        def vdot(vv, tt):
            return acceleration(b, vv, u_of_t(tt), np.zeros(6), R)

        k1 = vdot(v, t)
        k2 = vdot(v + dt / 2 * k1, t + dt / 2)
        k3 = vdot(v + dt / 2 * k2, t + dt / 2)
        k4 = vdot(v + dt * k3, t + dt)
        v = v + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        samples.append(v @ u_of_t((i + 1) * dt))
    ke_change = 0.5 * v @ M @ v - 0.5 * np.array([0.3, -0.1, 0.2, 0.8, -0.5, 0.4]) @ M @ np.array(
        [0.3, -0.1, 0.2, 0.8, -0.5, 0.4]
    )
    w = np.array(samples)
    simpson = dt / 3 * (w[0] + w[-1] + 4 * w[1:-1:2].sum() + 2 * w[2:-1:2].sum())
    assert ke_change == pytest.approx(simpson, rel=1e-7, abs=1e-9)


def test_gravity_wrench():
    assert np.array_equal(gravity_wrench(body(), np.eye(3)), np.zeros(6))
    g = gravity_wrench(body(gravity=(0.0, 0.0, -9.81)), np.eye(3))
    np.testing.assert_allclose(g, [0.0, 0.0, -9.81, 0.0, 0.0, 0.0], atol=0.0)
    rng = np.random.default_rng(7)
    for _ in range(50):
        R = random_rotation(rng)
        g = gravity_wrench(body(mass=1.0, gravity=(0.0, 0.0, -9.81)), R)
        assert np.linalg.norm(g[:3]) == pytest.approx(9.81, abs=1e-12)
        assert np.array_equal(g[3:], np.zeros(3))


def test_disturbance_and_noise_scaling():
    rng = np.random.default_rng(9)
    p1 = rng.standard_normal(3)
    R = random_rotation(rng)
    v = rng.standard_normal(6)
    assert np.array_equal(disturbance(DisturbanceModel(0.0, 0.05, 0.01), p1, R, v, 2.0), np.zeros(6))
    assert np.array_equal(disturbance(DisturbanceModel(0.08, 0.05, 0.01), p1, R, np.zeros(6), 2.0), np.zeros(6))
    for t in np.linspace(0.0, 50.0, 200):
        w = disturbance(DisturbanceModel(0.08, 0.05, 0.01), p1, R, v, float(t))
        assert np.all(np.abs(w) <= 0.08 * np.abs(v) + 1e-15)
    vt = measured_velocity(NoiseModel(0.0, 0.05, 0.01), p1, R, v, 2.0)
    assert np.array_equal(vt, v)


def test_acceleration_force_balance():
    rng = np.random.default_rng(11)
    for _ in range(100):
        b = body(mass=rng.uniform(0.1, 2), inertia=np.diag(rng.uniform(0.1, 2, 3)), gravity=rng.standard_normal(3))
        v = rng.standard_normal(6)
        R = random_rotation(rng)
        w = rng.standard_normal(6)
        u_balance = coriolis(b, v) @ v + gravity_wrench(b, R) + w
        np.testing.assert_allclose(acceleration(b, v, u_balance, w, R), np.zeros(6), atol=1e-12)
        # residual oracle on a random input
        u = rng.standard_normal(6)
        vdot = acceleration(b, v, u, w, R)
        M = np.zeros((6, 6))
        M[:3, :3] = b.mass * np.eye(3)
        M[3:, 3:] = b.inertia
        residual = M @ vdot + coriolis(b, v) @ v + gravity_wrench(b, R) + w - u
        np.testing.assert_allclose(residual, np.zeros(6), atol=1e-12)


def test_acceleration_simple_example():
    vdot = acceleration(body(mass=2.0), np.zeros(6), np.array([2.0, 0, 0, 0, 0, 0]), np.zeros(6), np.eye(3))
    np.testing.assert_allclose(vdot, [1.0, 0, 0, 0, 0, 0], atol=0.0)


def test_batched_matches_scalar_acceleration():
    rng = np.random.default_rng(13)
    bodies = [
        body(mass=rng.uniform(0.1, 1), inertia=np.diag(rng.uniform(0.1, 1, 3)), gravity=rng.standard_normal(3))
        for _ in range(4)
    ]
    R = random_rotation(rng, 4)
    v = rng.standard_normal((4, 6))
    u = rng.standard_normal((4, 6))
    w = rng.standard_normal((4, 6))
    J = np.stack([b.inertia for b in bodies])
    out = batched_acceleration(
        np.array([b.mass for b in bodies]), J, np.linalg.inv(J), R, v, u, w,
        np.stack([b.gravity_vec for b in bodies]),
    )
    for i, b in enumerate(bodies):
        np.testing.assert_allclose(out[i], acceleration(b, v[i], u[i], w[i], R[i]), rtol=1e-12, atol=1e-12)
