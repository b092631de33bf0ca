"""Performance funnels: decaying bounds, normalized errors, log transforms.

The pipeline per error channel is
    xi  = error / rho(t)          (normalize)
    eps = T(xi)                   (log transform, diverges at the boundary)
    r   = dT/dxi                  (slope; state-dependent gain)
with a dedicated transform per channel: distance errors live in
(-C_col, C_con), orientation errors in [0, 1), velocity errors in (-1, 1).

Boundary policy: inputs within GUARD of a boundary (or beyond) raise
FunnelViolation.  Containment is a theorem for the continuous closed loop,
so a hit indicates an integration-step or configuration problem and must
surface, not be clamped away.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    FunnelViolation,
    InfeasibleFormation,
    InitialOrientationTooFar,
    NegativeTime,
    ValidationError,
)

# Absolute distance from a funnel boundary treated as a violation; ln() of
# anything closer produces +-inf and poisons the state.
GUARD = 1e-12


@dataclass(frozen=True)
class PerformanceFunction:
    """Exponentially decaying bound rho(t) = (rho0 - rho_inf) e^{-l t} + rho_inf.

    Fields may be scalars or same-shape arrays (used for the six velocity
    channels of one agent).
    """

    rho0: np.ndarray | float
    rho_inf: np.ndarray | float
    l: np.ndarray | float

    def __post_init__(self):
        if np.any(np.asarray(self.rho_inf) <= 0.0) or np.any(
            np.asarray(self.rho0) <= np.asarray(self.rho_inf)
        ):
            raise ValidationError(
                f"performance function needs 0 < rho_inf < rho0, got "
                f"rho0={self.rho0!r}, rho_inf={self.rho_inf!r}"
            )
        if np.any(np.asarray(self.l) <= 0.0):
            raise ValidationError(f"decay rate must be positive, got l={self.l!r}")

    def eval(self, t):
        if isinstance(t, float):  # hot path inside the integrator stages
            if t < 0.0:
                raise NegativeTime(f"rho(t) undefined for t < 0, got t={t!r}")
            out = (self.rho0 - self.rho_inf) * np.exp(-self.l * t) + self.rho_inf
            return float(out) if np.ndim(out) == 0 else out
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 0.0):
            raise NegativeTime(f"rho(t) undefined for t < 0, got t={t!r}")
        out = (self.rho0 - self.rho_inf) * np.exp(-self.l * t) + self.rho_inf
        return float(out) if out.ndim == 0 else out

    def eval_deriv(self, t):
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 0.0):
            raise NegativeTime(f"rho'(t) undefined for t < 0, got t={t!r}")
        out = -self.l * (self.rho0 - self.rho_inf) * np.exp(-self.l * t)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class EdgeSpec:
    """Per-edge formation constants and funnels.

    C_col = d_des^2 - d_col^2 and C_con = d_con^2 - d_des^2 tie the funnel
    of the squared-distance error to the collision/connectivity limits.
    """

    d_col: float
    d_des: float
    d_con: float
    R_des: np.ndarray  # (3, 3)
    C_col: float
    C_con: float
    rho_e: PerformanceFunction
    rho_psi: PerformanceFunction


def make_edge_spec(
    d_col: float,
    d_des: float,
    d_con: float,
    R_des,
    rho_e_inf: float,
    l_e: float,
    psi0: float,
    rho_psi0: float,
    rho_psi_inf: float,
    l_psi: float,
) -> EdgeSpec:
    """Build a validated EdgeSpec.

    The distance funnel is normalized: rho_e(0) = 1 and it decays to
    rho_e_inf / max(C_con, C_col), so the width constants C_col/C_con carry
    the geometry while rho_e stays dimensionless.
    """
    if not (0.0 < d_col < d_des < d_con):
        raise InfeasibleFormation(
            f"need 0 < d_col < d_des < d_con, got ({d_col}, {d_des}, {d_con})"
        )
    C_col = d_des**2 - d_col**2
    C_con = d_con**2 - d_des**2
    c_max = max(C_con, C_col)
    if not (0.0 < rho_e_inf < c_max):
        raise ValidationError(
            f"rho_e_inf must lie in (0, max(C_con, C_col)) = (0, {c_max}), got {rho_e_inf}"
        )
    if not (psi0 < rho_psi0 < 2.0):
        raise InitialOrientationTooFar(
            f"need psi(0) < rho_psi0 < 2, got psi(0)={psi0}, rho_psi0={rho_psi0}"
        )
    R_des = np.asarray(R_des, dtype=np.float64)
    return EdgeSpec(
        d_col=float(d_col),
        d_des=float(d_des),
        d_con=float(d_con),
        R_des=R_des,
        C_col=float(C_col),
        C_con=float(C_con),
        rho_e=PerformanceFunction(1.0, rho_e_inf / c_max, l_e),
        rho_psi=PerformanceFunction(rho_psi0, rho_psi_inf, l_psi),
    )


@dataclass(frozen=True)
class VelocityFunnel:
    """Six per-component funnels for one agent's velocity error."""

    rho: PerformanceFunction  # fields are (6,) arrays

    @classmethod
    def from_initial_error(cls, e_v0, l, rho_inf, scale: float = 2.0, offset: float = 1.0):
        """Default construction rho0 = scale*|e_v(0)| + offset (> |e_v(0)|)."""
        e_v0 = np.abs(np.asarray(e_v0, dtype=np.float64))
        if e_v0.shape != (6,):
            raise ValidationError(f"velocity error must have 6 components, got {e_v0.shape}")
        return cls.explicit(scale * e_v0 + offset, l, rho_inf, e_v0)

    @classmethod
    def explicit(cls, rho0, l, rho_inf, e_v0):
        """Explicit rho0 (scalar or per-component); must clear |e_v(0)|."""
        e_v0 = np.abs(np.asarray(e_v0, dtype=np.float64))
        rho0 = np.broadcast_to(np.asarray(rho0, dtype=np.float64), (6,)).copy()
        if np.any(rho0 <= e_v0):
            raise ValidationError(
                "velocity funnel too tight: rho_v(0) must exceed |e_v(0)| "
                f"componentwise (rho0={rho0!r}, |e_v0|={e_v0!r})"
            )
        return cls(
            PerformanceFunction(
                rho0,
                np.broadcast_to(float(rho_inf), (6,)).copy(),
                np.broadcast_to(float(l), (6,)).copy(),
            )
        )


def normalize(e, rho_value):
    """xi = e / rho(t); domain violations surface later in the transforms."""
    out = np.asarray(e, dtype=np.float64) / np.asarray(rho_value, dtype=np.float64)
    return float(out) if out.ndim == 0 else out


def _check_domain(xi, lo, hi, label):
    xi = np.asarray(xi, dtype=np.float64)
    bad = ~((xi > lo + GUARD) & (xi < hi - GUARD))
    if np.any(bad):
        flat = np.ravel(xi)
        worst = int(np.argmax(np.where(np.ravel(bad), np.maximum(lo - flat, flat - hi), -np.inf)))
        raise FunnelViolation(flat[worst], lo, hi, where=label)
    return xi


def transform_e(xi, C_col: float, C_con: float):
    """T_e(x) = ln((1 + x/C_col) / (1 - x/C_con)) on (-C_col, C_con)."""
    xi = _check_domain(xi, -C_col, C_con, "distance error")
    out = np.log((1.0 + xi / C_col) / (1.0 - xi / C_con))
    return float(out) if out.ndim == 0 else out


def transform_psi(xi):
    """T_psi(x) = ln(1 / (1 - x)) on [0, 1)."""
    xi = _check_domain(xi, -GUARD * 2.0, 1.0, "orientation error")
    out = -np.log1p(-xi)
    return float(out) if out.ndim == 0 else out


def transform_v(xi):
    """T_v(x) = ln((1 + x) / (1 - x)) on (-1, 1)."""
    xi = _check_domain(xi, -1.0, 1.0, "velocity error")
    out = np.log((1.0 + xi) / (1.0 - xi))
    return float(out) if out.ndim == 0 else out


def slope_e(xi, C_col: float, C_con: float):
    """dT_e/dx = (1/C_col + 1/C_con) / ((1 + x/C_col)(1 - x/C_con)).

    Minimum over the domain is 4/(C_col + C_con), attained at
    x = (C_con - C_col)/2.
    """
    xi = _check_domain(xi, -C_col, C_con, "distance error")
    out = (1.0 / C_col + 1.0 / C_con) / ((1.0 + xi / C_col) * (1.0 - xi / C_con))
    return float(out) if out.ndim == 0 else out


def slope_psi(xi):
    """dT_psi/dx = 1/(1 - x) >= 1 on [0, 1)."""
    xi = _check_domain(xi, -GUARD * 2.0, 1.0, "orientation error")
    out = 1.0 / (1.0 - xi)
    return float(out) if out.ndim == 0 else out


def slope_v(xi):
    """dT_v/dx = 2/((1 + x)(1 - x)) >= 2 on (-1, 1), equality only at 0."""
    xi = _check_domain(xi, -1.0, 1.0, "velocity error")
    out = 2.0 / ((1.0 + xi) * (1.0 - xi))
    return float(out) if out.ndim == 0 else out
