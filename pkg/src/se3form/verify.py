"""Offline checking of traces and of the package's mathematical identities.

check_funnels re-derives every containment inequality from the scenario and
the recorded rows with zero tolerance (the guarantees are strict, and the
17-digit trace makes strictness meaningful).  check_error_dynamics confirms
the recorded trajectory actually satisfies the error kinematics by central
finite differences.  check_identities samples the algebraic identities the
control design rests on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import graph as gr
from .errors import SchemaMismatch
from .funnel import slope_psi, slope_v, transform_psi
from .se3 import (
    dot3,
    mat_t_mul3,
    psi_error,
    random_rotation,
    rot_t_apply,
    rotation_error_vec,
    skew,
    trace3,
    unskew,
)
from .sim import Scenario, Trace


@dataclass(frozen=True)
class ViolationRecord:
    kind: str
    time: float
    where: str
    observed: float
    bound: float
    margin: float

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "time": self.time,
            "where": self.where,
            "observed": self.observed,
            "bound": self.bound,
            "margin": self.margin,
        }


@dataclass
class ViolationReport:
    records: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.records

    def add(self, kind, times, where_fmt, observed, bounds, margins, mask):
        for idx in np.flatnonzero(mask):
            self.records.append(
                ViolationRecord(
                    kind=kind,
                    time=float(times[idx]),
                    where=where_fmt(int(idx)),
                    observed=float(observed[idx]),
                    bound=float(bounds[idx]),
                    margin=float(margins[idx]),
                )
            )

    def as_dict(self) -> dict:
        return {"ok": self.ok, "violations": [r.as_dict() for r in self.records]}


def check_funnels(trace: Trace, scenario: Scenario) -> ViolationReport:
    """Every row must satisfy the strict funnel and distance inequalities.

    Funnel bounds are recomputed from the scenario, not read from the trace,
    so the offline check is independent of what the simulator wrote.
    """
    if trace.n_agents != scenario.n_agents or trace.n_edges != scenario.n_edges:
        raise SchemaMismatch(
            f"trace has N={trace.n_agents}, K={trace.n_edges}; scenario has "
            f"N={scenario.n_agents}, K={scenario.n_edges}"
        )
    report = ViolationReport()
    t = trace.t
    for k, spec in enumerate(scenario.edge_specs):
        rho_e = spec.rho_e.eval(t)
        rho_psi = spec.rho_psi.eval(t)
        lb = -spec.C_col * rho_e
        ub = spec.C_con * rho_e
        e = trace.e[:, k]
        psi = trace.psi[:, k]
        dist = trace.dist[:, k]
        edge_name = f"edge {k + 1}"

        report.add("distance_error_low", t, lambda i: f"{edge_name} row {i}",
                   e, lb, e - lb, e <= lb)
        report.add("distance_error_high", t, lambda i: f"{edge_name} row {i}",
                   e, ub, ub - e, e >= ub)
        report.add("orientation_error", t, lambda i: f"{edge_name} row {i}",
                   psi, rho_psi, rho_psi - psi, psi >= rho_psi)
        report.add("orientation_singularity", t, lambda i: f"{edge_name} row {i}",
                   psi, np.full_like(psi, 2.0), 2.0 - psi, psi >= 2.0)
        report.add("collision", t, lambda i: f"{edge_name} row {i}",
                   dist, np.full_like(dist, spec.d_col), dist - spec.d_col,
                   dist <= spec.d_col)
        report.add("connectivity", t, lambda i: f"{edge_name} row {i}",
                   dist, np.full_like(dist, spec.d_con), spec.d_con - dist,
                   dist >= spec.d_con)
    return report


def check_error_dynamics(trace: Trace, scenario: Scenario) -> dict:
    """Central-difference derivatives of e_k, psi_k vs their closed forms.

    Returns max absolute residuals per edge plus the default tolerance
    50 dt^2 |v|_peak (central differencing is second order; the constant
    absorbs the third derivatives of the closed loop).
    """
    if trace.n_agents != scenario.n_agents or trace.n_edges != scenario.n_edges:
        raise SchemaMismatch("trace shape does not match scenario")
    t = trace.t
    if len(t) < 3:
        raise SchemaMismatch("need at least 3 rows for central differences")
    dtv = np.diff(t)
    dt = float(dtv[0])
    if not np.allclose(dtv, dt, rtol=0.0, atol=1e-9 * max(dt, 1.0)):
        raise SchemaMismatch("trace time grid is not uniform")

    g = scenario.graph
    R_tail = trace.R[:, g.tails]  # (T, K, 3, 3)
    R_head = trace.R[:, g.heads]
    p_rel = trace.p[:, g.heads] - trace.p[:, g.tails]
    rel_pos = rot_t_apply(R_tail, p_rel)
    rel_rot = mat_t_mul3(R_head, R_tail)
    vL_tail = trace.v[:, g.tails, 0:3]
    vL_head = trace.v[:, g.heads, 0:3]
    w_tail = trace.v[:, g.tails, 3:6]
    w_head = trace.v[:, g.heads, 3:6]

    e_dot = 2.0 * dot3(rel_pos, rot_t_apply(rel_rot, vL_head) - vL_tail)
    Rdes = np.stack([s.R_des for s in scenario.edge_specs])
    Q = mat_t_mul3(Rdes, rel_rot)
    e_R = np.empty(Q.shape[:-2] + (3,))
    e_R[..., 0] = Q[..., 1, 2] - Q[..., 2, 1]
    e_R[..., 1] = Q[..., 2, 0] - Q[..., 0, 2]
    e_R[..., 2] = Q[..., 0, 1] - Q[..., 1, 0]
    psi_dot = 0.5 * dot3(e_R, rot_t_apply(rel_rot, w_head) - w_tail)

    fd_e = (trace.e[2:] - trace.e[:-2]) / (2.0 * dt)
    fd_psi = (trace.psi[2:] - trace.psi[:-2]) / (2.0 * dt)
    res_e = np.max(np.abs(fd_e - e_dot[1:-1]), axis=0)
    res_psi = np.max(np.abs(fd_psi - psi_dot[1:-1]), axis=0)
    v_peak = float(np.sqrt(np.sum(trace.v**2, axis=2)).max())
    return {
        "dt": dt,
        "residual_e": res_e,
        "residual_psi": res_psi,
        "max_residual": float(max(res_e.max(), res_psi.max())),
        "v_peak": v_peak,
        "tolerance": 50.0 * dt * dt * v_peak,
    }


def check_identities(samples: int = 1000, seed: int = 0) -> dict:
    """Sampled verification of the algebraic identities; worst deviations.

    Covers the skew-map properties, the e_R / psi identity (with the
    factor-4 normalization of the unhalved e_R), the tree-Laplacian
    positivity, the exp-inequality exp(x)(exp(x)-1) >= x^2, its link to the
    orientation funnel slope, and the spectrum preservation of the
    orientation incidence matrix.
    """
    rng = np.random.default_rng(seed)
    out: dict[str, float] = {}

    x = rng.standard_normal((samples, 3))
    y = rng.standard_normal((samples, 3))
    A = rng.standard_normal((samples, 3, 3))
    R = random_rotation(rng, samples)
    Sx, Sy = skew(x), skew(y)
    out["skew_quadratic_max"] = float(np.max(np.abs(dot3(x, np.einsum("nij,nj->ni", Sy, x)))))
    out["skew_rotation_conjugation_max"] = float(
        np.max(np.abs(skew(np.einsum("nij,nj->ni", R, x)) - np.einsum("nij,njk,nlk->nil", R, Sx, R)))
    )
    out["skew_trace_dot_max"] = float(
        np.max(np.abs(-0.5 * trace3(np.einsum("nij,njk->nik", Sx, Sy)) - dot3(x, y)))
    )
    out["skew_trace_unskew_max"] = float(
        np.max(
            np.abs(
                trace3(np.einsum("nij,njk->nik", A, Sx))
                + dot3(x, unskew(A - np.swapaxes(A, -1, -2), tol=np.inf))
            )
        )
    )

    R1 = random_rotation(rng, samples)
    R2 = random_rotation(rng, samples)
    Rd = random_rotation(rng, samples)
    psi = psi_error(R1, R2, Rd)
    e_R = rotation_error_vec(R1, R2, Rd)
    out["e_R_identity_max"] = float(np.max(np.abs(dot3(e_R, e_R) - 4.0 * psi * (2.0 - psi))))
    out["psi_min"] = float(psi.min())
    out["psi_max"] = float(psi.max())

    xs = np.linspace(0.0, 20.0, 10_000)
    out["exp_inequality_min"] = float(np.min(np.exp(xs) * (np.exp(xs) - 1.0) - xs * xs))

    xi = rng.random(samples) * (1.0 - 1e-9)
    eps = transform_psi(xi)
    out["slope_psi_link_max_rel"] = float(
        np.max(
            np.abs(slope_psi(xi) ** 2 * xi - np.exp(eps) * (np.exp(eps) - 1.0))
            / np.maximum(np.exp(eps) * (np.exp(eps) - 1.0), 1e-300)
        )
    )
    out["slope_v_min"] = float(np.min(slope_v(rng.uniform(-0.999, 0.999, samples))))

    lam_min = np.inf
    sv_dev = 0.0
    for _ in range(100):
        g = gr.random_tree(rng, int(rng.integers(2, 9)))
        delta = rng.uniform(0.1, 10.0, g.n_agents)
        lam_min = min(lam_min, gr.weighted_laplacian_min_eig(g, delta))
        rot = random_rotation(rng, g.n_agents)
        D_R = gr.orientation_incidence(g, rot)
        D_kron = np.kron(gr.incidence(g).astype(float), np.eye(3))
        sv = np.linalg.svd(D_R, compute_uv=False)
        sv0 = np.linalg.svd(D_kron, compute_uv=False)
        sv_dev = max(sv_dev, float(np.max(np.abs(sv - sv0))))
    out["tree_laplacian_min_eig"] = float(lam_min)
    out["orientation_incidence_sv_dev_max"] = sv_dev
    return out
