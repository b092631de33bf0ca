"""Rotation-group math on plain numpy arrays.

Conventions used throughout the package:

- 3-vectors are arrays of shape ``(..., 3)``, rotations are row-major arrays
  of shape ``(..., 3, 3)``; every function broadcasts over leading axes, so
  the same code path serves a single agent and a stacked batch of agents.
- Every product funnels through the small set of kernels below, which
  delegate to numpy's matmul.  For 3x3 operands matmul runs numpy's own
  batched inner loop with a fixed accumulation order, identically for 2D
  and stacked operands, so the per-edge API and the batched simulator path
  agree bit for bit (a regression test pins this property).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import Degenerate, NotSkewSymmetric

# Orthonormality invariant for rotation matrices: ||R^T R - I||_F <= ROT_TOL.
ROT_TOL = 1e-9
# Drift level at which the integrator re-projects a rotation onto SO(3).
ROT_REPAIR_TOL = 1e-10
# Below this angle so3_exp/dexpinv switch to series coefficients.
SMALL_ANGLE = 1e-8


@dataclass(frozen=True)
class Pose:
    """World position (m) and body-to-world rotation of one rigid body."""

    p: np.ndarray  # (3,)
    R: np.ndarray  # (3, 3)


@dataclass(frozen=True)
class Twist:
    """Body-frame linear (m/s) and angular (rad/s) velocity."""

    v_L: np.ndarray  # (3,)
    omega: np.ndarray  # (3,)

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.v_L, self.omega])


def dot3(a, b):
    """Euclidean dot product over the last axis, fixed summation order."""
    return (a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1]) + a[..., 2] * b[..., 2]


def cross3(a, b):
    out = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=np.float64)
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def norm3(a):
    return np.sqrt(dot3(a, a))


def rot_apply(R, x):
    """R @ x over the last axes."""
    return (R @ x[..., None])[..., 0]


def rot_t_apply(R, x):
    """R^T @ x over the last axes."""
    return (np.swapaxes(R, -1, -2) @ x[..., None])[..., 0]


def mat_mul3(A, B):
    """A @ B for (..., 3, 3) operands."""
    return A @ B


def mat_t_mul3(A, B):
    """A^T @ B for (..., 3, 3) operands."""
    return np.swapaxes(A, -1, -2) @ B


def trace3(A):
    return (A[..., 0, 0] + A[..., 1, 1]) + A[..., 2, 2]


def transpose3(A):
    return np.swapaxes(A, -1, -2)


def identity3(shape=()):
    out = np.zeros(tuple(shape) + (3, 3), dtype=np.float64)
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = 1.0
    out[..., 2, 2] = 1.0
    return out


def skew(v) -> np.ndarray:
    """Antisymmetric matrix A with A @ y == v x y for every y."""
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (3, 3), dtype=np.float64)
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def unskew(A, tol: float = 1e-8) -> np.ndarray:
    """Inverse of :func:`skew`; rejects matrices that are not antisymmetric.

    The symmetric part is measured in Frobenius norm against ``tol``.
    """
    A = np.asarray(A, dtype=np.float64)
    sym = A + transpose3(A)
    defect = np.sqrt(np.sum(sym * sym, axis=(-2, -1)))
    if np.any(defect > tol):
        raise NotSkewSymmetric(
            f"||A + A^T||_F = {float(np.max(defect)):.3e} exceeds tol={tol:.1e}"
        )
    return axial(A)


def axial(A) -> np.ndarray:
    """Vector part of the antisymmetric (part of a) matrix, no checking."""
    A = np.asarray(A, dtype=np.float64)
    out = np.empty(A.shape[:-2] + (3,), dtype=np.float64)
    out[..., 0] = A[..., 2, 1]
    out[..., 1] = A[..., 0, 2]
    out[..., 2] = A[..., 1, 0]
    return out


def so3_exp(v) -> np.ndarray:
    """Matrix exponential of skew(v) via the Rodrigues formula.

    For angles below SMALL_ANGLE the sin/cos coefficient ratios are replaced
    by their second-order series to avoid 0/0.
    """
    v = np.asarray(v, dtype=np.float64)
    theta2 = dot3(v, v)
    theta = np.sqrt(theta2)
    if theta.min() >= SMALL_ANGLE:  # common case: no series patch needed
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    else:
        # sin(t)/t and (1-cos(t))/t^2 with the denominators made safe
        small = theta < SMALL_ANGLE
        theta_safe = np.where(small, 1.0, theta)
        a = np.where(small, 1.0 - theta2 / 6.0, np.sin(theta) / theta_safe)
        b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(theta)) / (theta_safe * theta_safe))
    S = skew(v)
    out = identity3(v.shape[:-1])
    out += a[..., None, None] * S
    out += b[..., None, None] * (S @ S)
    return out


def dexpinv(theta, a) -> np.ndarray:
    """Inverse tangent of exp on SO(3) for body-frame kinematics.

    Solves d/dt exp(S(theta)) = exp(S(theta)) S(a) for theta_dot:
    dexpinv_theta(a) = a + theta x a / 2 + c(|theta|) theta x (theta x a),
    with c(x) = (1 - (x/2) cot(x/2)) / x^2 and the series c = 1/12 +
    x^2/720 near zero.  The closed form is exact in the even commutator
    orders, which is what the 4th-order Munthe-Kaas stages need.
    """
    theta = np.asarray(theta, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    x2 = dot3(theta, theta)
    if x2.max() < 1e-8:  # integrator stages live here
        c = 1.0 / 12.0 + x2 / 720.0
    else:
        x = np.sqrt(x2)
        small = x < 1e-4
        x_safe = np.where(small, 1.0, x)
        half = 0.5 * x_safe
        c = np.where(small, 1.0 / 12.0 + x2 / 720.0, (1.0 - half / np.tan(half)) / (x_safe * x_safe))
    ta = cross3(theta, a)
    return a + 0.5 * ta + c[..., None] * cross3(theta, ta)


def orthonormality_defect(R) -> np.ndarray:
    """||R^T R - I||_F, the manifold-drift measure logged by the simulator."""
    R = np.asarray(R, dtype=np.float64)
    G = mat_t_mul3(R, R)
    G[..., 0, 0] -= 1.0
    G[..., 1, 1] -= 1.0
    G[..., 2, 2] -= 1.0
    return np.sqrt(np.sum(G * G, axis=(-2, -1)))


def is_rotation(R, tol: float = ROT_TOL) -> bool:
    R = np.asarray(R, dtype=np.float64)
    if np.any(orthonormality_defect(R) > tol):
        return False
    return bool(np.all(np.abs(np.linalg.det(R) - 1.0) <= tol))


def project_so3(M) -> np.ndarray:
    """Nearest rotation in Frobenius norm (polar factor via SVD).

    Idempotent on rotations up to rounding; raises Degenerate when the
    input has non-positive determinant and no nearest rotation exists.
    """
    M = np.asarray(M, dtype=np.float64)
    if np.any(np.linalg.det(M) <= 0.0):
        raise Degenerate("matrix with det <= 0 cannot be projected onto SO(3)")
    U, _, Vt = np.linalg.svd(M)
    R = U @ Vt
    # det(U Vt) = +1 is guaranteed here because det(M) > 0, but rounding can
    # leave R slightly off the manifold; one more polish pass is cheap.
    flip = np.linalg.det(R)
    if np.any(flip <= 0.0):  # pragma: no cover - unreachable for det(M) > 0
        raise Degenerate("projection produced a reflection")
    return R


def repair_rotation(R) -> np.ndarray:
    """One Newton-Schulz orthonormalization sweep, R(3I - R^T R)/2.

    Meant for integrator drift repair where ||R^T R - I|| is tiny; built
    from fixed-order products only, so it preserves the bitwise sign-flip
    equivariance the closed-loop tests check (an SVD would not).
    """
    G = mat_t_mul3(R, R)
    H = -0.5 * G
    H[..., 0, 0] += 1.5
    H[..., 1, 1] += 1.5
    H[..., 2, 2] += 1.5
    return mat_mul3(R, H)


def psi_error(R1, R2, Rdes) -> np.ndarray | float:
    """Orientation error 0.5 tr[I - Rdes^T R2^T R1], clamped to [0, 2]."""
    Q = mat_t_mul3(np.asarray(Rdes, dtype=np.float64), mat_t_mul3(R2, R1))
    psi = 0.5 * (3.0 - trace3(Q))
    psi = np.clip(psi, 0.0, 2.0)
    return float(psi) if psi.ndim == 0 else psi


def rotation_error_vec(R1, R2, Rdes) -> np.ndarray:
    """Angular error vector S^-1(R1^T R2 Rdes - Rdes^T R2^T R1).

    Satisfies ||e_R||^2 = 4 psi (2 - psi); vanishes both at the target
    (psi = 0) and at the antipodal configuration (psi = 2).
    """
    Q = mat_t_mul3(np.asarray(Rdes, dtype=np.float64), mat_t_mul3(R2, R1))
    return axial(transpose3(Q) - Q)


def psi_and_error_from_relative(rel_rot, Rdes):
    """(psi, e_R) from the relative rotation R2^T R1 alone.

    This is the locality-preserving form used by the controller: it never
    sees the world-frame rotations, only their relative product.
    """
    Q = mat_t_mul3(np.asarray(Rdes, dtype=np.float64), np.asarray(rel_rot, dtype=np.float64))
    psi = np.clip(0.5 * (3.0 - trace3(Q)), 0.0, 2.0)
    e_R = axial(transpose3(Q) - Q)
    return psi, e_R


def random_rotation(rng: np.random.Generator, size=None) -> np.ndarray:
    """Haar-uniform rotation(s) via normalized quaternions."""
    shape = () if size is None else (size,)
    q = rng.standard_normal(shape + (4,))
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(shape + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[..., 0, 1] = 2.0 * (x * y - w * z)
    R[..., 0, 2] = 2.0 * (x * z + w * y)
    R[..., 1, 0] = 2.0 * (x * y + w * z)
    R[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[..., 1, 2] = 2.0 * (y * z - w * x)
    R[..., 2, 0] = 2.0 * (x * z - w * y)
    R[..., 2, 1] = 2.0 * (y * z + w * x)
    R[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return R
