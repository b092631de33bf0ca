"""Decentralized two-step control law.

Step one turns per-edge relative measurements into desired body-frame
velocities through the funnel slopes; step two turns the (noisy) velocity
tracking error into a wrench.  Neither step ever touches a world-frame
quantity: the type signatures only admit RelativeMeasurement, the agent's
own measured velocity, its gains, and the funnel clocks.

The batched helpers at the bottom are the exact same arithmetic evaluated
for all edges/agents at once; the simulator uses them, and a test pins them
bitwise against the per-agent functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import funnel as fn
from .errors import FunnelViolation, ValidationError
from .funnel import EdgeSpec, VelocityFunnel
from .graph import TreeGraph
from .se3 import Pose, Twist, dot3, mat_t_mul3, norm3, psi_and_error_from_relative, rot_apply, rot_t_apply


@dataclass(frozen=True)
class RelativeMeasurement:
    """What one edge's endpoints can sense about each other.

    rel_pos_in_tail = R_tail^T (p_head - p_tail), rel_rot = R_head^T R_tail,
    distance = |p_head - p_tail|.  World positions never leave
    :func:`measure_edge`.
    """

    rel_pos_in_tail: np.ndarray  # (3,)
    rel_rot: np.ndarray  # (3, 3)
    distance: float


@dataclass(frozen=True)
class ControllerGains:
    """Per-agent positive gains: delta scales v_des, gamma scales the wrench."""

    delta: float
    gamma: float

    def __post_init__(self):
        if self.delta <= 0.0 or self.gamma <= 0.0:
            raise ValidationError(f"gains must be positive, got {self}")


def measure_edge(pose_tail: Pose, pose_head: Pose) -> RelativeMeasurement:
    """Sense one edge; the locality boundary of the whole controller."""
    p_rel = np.asarray(pose_head.p, dtype=np.float64) - np.asarray(pose_tail.p, dtype=np.float64)
    rel_pos = rot_t_apply(np.asarray(pose_tail.R, dtype=np.float64), p_rel)
    rel_rot = mat_t_mul3(np.asarray(pose_head.R, dtype=np.float64), np.asarray(pose_tail.R, dtype=np.float64))
    return RelativeMeasurement(
        rel_pos_in_tail=rel_pos,
        rel_rot=rel_rot,
        distance=float(norm3(rel_pos)),
    )


@dataclass(frozen=True)
class EdgeTerms:
    """Funnel-processed quantities both endpoints of an edge agree on."""

    e: float
    psi: float
    e_R: np.ndarray  # (3,)
    coef_e: float  # 2 r_e(xi_e) eps_e / rho_e(t)
    coef_psi: float  # r_psi(xi_psi) / rho_psi(t)


def edge_error_terms(m: RelativeMeasurement, spec: EdgeSpec, t: float) -> EdgeTerms:
    """Shared per-edge pipeline: errors, normalization, transform, slopes.

    Computed once per edge per evaluation and handed to both endpoint
    agents; they see identical values by construction.
    """
    e = m.distance * m.distance - spec.d_des * spec.d_des
    psi, e_R = psi_and_error_from_relative(m.rel_rot, spec.R_des)
    rho_e = spec.rho_e.eval(t)
    rho_psi = spec.rho_psi.eval(t)
    xi_e = fn.normalize(e, rho_e)
    xi_psi = max(fn.normalize(psi, rho_psi), 0.0)
    eps_e = fn.transform_e(xi_e, spec.C_col, spec.C_con)
    r_e = fn.slope_e(xi_e, spec.C_col, spec.C_con)
    r_psi = fn.slope_psi(xi_psi)
    return EdgeTerms(
        e=float(e),
        psi=float(psi),
        e_R=e_R,
        coef_e=float(2.0 * (r_e / rho_e) * eps_e),
        coef_psi=float(r_psi / rho_psi),
    )


def desired_velocity(
    i: int,
    g: TreeGraph,
    specs,
    measurements,
    t: float,
    delta_i: float,
) -> Twist:
    """Reference twist for agent i from its incident edges only.

    measurements/specs are per-edge sequences aligned with g's edge order;
    only entries for edges incident to i are touched.  The tail weighs an
    edge with -I, the head with rel_rot, so both work in their own frames.
    """
    acc_lin = np.zeros(3, dtype=np.float64)
    acc_ang = np.zeros(3, dtype=np.float64)
    for k in g.incident[i]:
        m = measurements[k]
        terms = edge_error_terms(m, specs[k], t)
        if i == g.tails[k]:
            acc_lin = acc_lin - terms.coef_e * m.rel_pos_in_tail
            acc_ang = acc_ang - terms.coef_psi * terms.e_R
        else:
            acc_lin = acc_lin + terms.coef_e * rot_apply(m.rel_rot, m.rel_pos_in_tail)
            acc_ang = acc_ang + terms.coef_psi * rot_apply(m.rel_rot, terms.e_R)
    return Twist(v_L=-delta_i * acc_lin, omega=-delta_i * acc_ang)


def velocity_error(measured_v, v_des: Twist) -> np.ndarray:
    """e_v = vtilde - v_des, from the noisy measured twist."""
    return np.asarray(measured_v, dtype=np.float64) - v_des.stacked()


def control_input(e_v, vf: VelocityFunnel, t: float, gamma_i: float) -> np.ndarray:
    """Wrench u = -gamma rho_v(t)^-1 r_v(xi_v) T_v(xi_v), componentwise."""
    rho = vf.rho.eval(t)
    xi = fn.normalize(np.asarray(e_v, dtype=np.float64), rho)
    return -gamma_i * (1.0 / rho) * fn.slope_v(xi) * fn.transform_v(xi)


# --- batched path used by the simulator ------------------------------------
#
# Same arithmetic as the per-agent functions above, evaluated for all edges
# or agents at once.  Accumulation and guard checks run in edge/agent order
# so results match the scalar path bit for bit.


def stack_edge_specs(specs) -> dict:
    """Column-stack a list of EdgeSpec into arrays keyed by field name."""
    d_des = np.array([s.d_des for s in specs])
    return {
        "d_des": d_des,
        "d_des2": d_des * d_des,
        "d_col": np.array([s.d_col for s in specs]),
        "d_con": np.array([s.d_con for s in specs]),
        "C_col": np.array([s.C_col for s in specs]),
        "C_con": np.array([s.C_con for s in specs]),
        "R_des": np.stack([s.R_des for s in specs]),
        "rho_e": fn.PerformanceFunction(
            np.array([s.rho_e.rho0 for s in specs]),
            np.array([s.rho_e.rho_inf for s in specs]),
            np.array([s.rho_e.l for s in specs]),
        ),
        "rho_psi": fn.PerformanceFunction(
            np.array([s.rho_psi.rho0 for s in specs]),
            np.array([s.rho_psi.rho_inf for s in specs]),
            np.array([s.rho_psi.l for s in specs]),
        ),
    }


def batch_edge_terms(rel_pos, rel_rot, sa: dict, t: float,
                     rho_e=None, rho_psi=None) -> dict:
    """Vectorized :func:`edge_error_terms` over all K edges.

    ``sa`` is the dict from :func:`stack_edge_specs`; the funnel values may
    be passed in when the caller already evaluated them for this time.
    Raises FunnelViolation naming the offending edge and time.
    """
    C_col, C_con = sa["C_col"], sa["C_con"]
    dist = np.sqrt(dot3(rel_pos, rel_pos))
    e = dist * dist - sa["d_des2"]
    psi, e_R = psi_and_error_from_relative(rel_rot, sa["R_des"])
    if rho_e is None:
        rho_e = sa["rho_e"].eval(t)
    if rho_psi is None:
        rho_psi = sa["rho_psi"].eval(t)
    xi_e = e / rho_e
    xi_psi = np.maximum(psi / rho_psi, 0.0)
    _guard_edges(xi_e, -C_col, C_con, "distance error", t)
    _guard_edges(xi_psi, -1.0, 1.0, "orientation error", t)
    eps_e = np.log((1.0 + xi_e / C_col) / (1.0 - xi_e / C_con))
    r_e = (1.0 / C_col + 1.0 / C_con) / ((1.0 + xi_e / C_col) * (1.0 - xi_e / C_con))
    r_psi = 1.0 / (1.0 - xi_psi)
    return {
        "e": e,
        "psi": psi,
        "e_R": e_R,
        "dist": dist,
        "coef_e": 2.0 * (r_e / rho_e) * eps_e,
        "coef_psi": r_psi / rho_psi,
        "rho_e": rho_e,
        "rho_psi": rho_psi,
    }


def _guard_edges(xi, lo, hi, label: str, t: float):
    inside = (xi > lo + fn.GUARD) & (xi < hi - fn.GUARD)
    if not inside.all():
        k = int(np.argmax(~inside))
        lo_k = np.broadcast_to(lo, xi.shape)[k]
        hi_k = np.broadcast_to(hi, xi.shape)[k]
        raise FunnelViolation(xi[k], lo_k, hi_k, where=f"edge {k + 1} ({label})", time=t)


def scatter_index(g: TreeGraph) -> np.ndarray:
    """Interleaved [tail_0, head_0, tail_1, head_1, ...] agent indices."""
    idx = np.empty(2 * g.n_edges, dtype=np.intp)
    idx[0::2] = g.tails
    idx[1::2] = g.heads
    return idx


def batch_desired_velocity(g: TreeGraph, terms: dict, rel_pos, rel_rot, delta,
                           scatter_idx: np.ndarray | None = None):
    """Stack of per-agent desired twists (N, 6).

    np.add.at applies the interleaved contributions strictly in index
    order, so each agent accumulates its edges in ascending edge order,
    exactly like the loop in :func:`desired_velocity`.
    """
    coef_e = terms["coef_e"][:, None]
    coef_psi = terms["coef_psi"][:, None]
    contrib = np.empty((2 * g.n_edges, 6), dtype=np.float64)
    contrib[0::2, 0:3] = -coef_e * rel_pos
    contrib[0::2, 3:6] = -coef_psi * terms["e_R"]
    contrib[1::2, 0:3] = coef_e * rot_apply(rel_rot, rel_pos)
    contrib[1::2, 3:6] = coef_psi * rot_apply(rel_rot, terms["e_R"])
    acc = np.zeros((g.n_agents, 6), dtype=np.float64)
    np.add.at(acc, scatter_index(g) if scatter_idx is None else scatter_idx, contrib)
    return -delta[:, None] * acc


def batch_control_input(e_v, rho_v, gamma, t: float):
    """Vectorized wrench law; e_v, rho_v are (N, 6), gamma is (N,)."""
    xi = e_v / rho_v
    inside = (xi > -1.0 + fn.GUARD) & (xi < 1.0 - fn.GUARD)
    if not inside.all():
        i, l = np.unravel_index(int(np.argmax(~inside)), inside.shape)
        raise FunnelViolation(
            xi[i, l], -1.0, 1.0, where=f"agent {i + 1} velocity component {l + 1}", time=t
        )
    r_v = 2.0 / ((1.0 + xi) * (1.0 - xi))
    T_v = np.log((1.0 + xi) / (1.0 - xi))
    return -gamma[:, None] * (1.0 / rho_v) * r_v * T_v
