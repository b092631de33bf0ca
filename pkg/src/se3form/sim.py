"""Closed-loop simulation: scenario files, Lie-group integration, traces.

The loop is a fixed-step Munthe-Kaas RK4: positions and velocities advance
by classical RK4 on the stage derivatives, rotations by R <- R exp(S(Theta))
with Theta the RK4 combination of dexpinv-corrected body angular rates.
The control law is continuous-time and is re-evaluated at every integrator
stage (see _stage for why holding it across a step is not viable here);
the recorded trace samples it on the step grid.  Everything is
deterministic: (scenario bytes, seed, dt) reproduce a bit-identical trace.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time as _time
from dataclasses import dataclass, field, replace

import numpy as np

from . import controller as ctrl
from .errors import FunnelViolation, ParseError, ValidationError
from .funnel import EdgeSpec, PerformanceFunction, make_edge_spec
from .graph import TreeGraph, validate_tree
from .plant import DisturbanceModel, NoiseModel, RigidBodyParams, batched_acceleration
from .se3 import (
    ROT_REPAIR_TOL,
    ROT_TOL,
    dexpinv,
    is_rotation,
    mat_mul3,
    mat_t_mul3,
    norm3,
    orthonormality_defect,
    psi_error,
    repair_rotation,
    rot_apply,
    rot_t_apply,
    so3_exp,
)

log = logging.getLogger("se3form")

SCHEMA_VERSION = 1
RNG_ID = "philox4x64(key=[seed, agent_index])"

# Fixed per-agent draw order; all ten are always drawn so the stream layout
# does not depend on which fields a scenario randomizes.
_DRAW_ORDER = (
    "mass", "inertia_x", "inertia_y", "inertia_z",
    "dist_amplitude", "dist_omega", "dist_phi",
    "noise_amplitude", "noise_omega", "noise_phi",
)


@dataclass(frozen=True)
class Scenario:
    """Fully validated simulation configuration with frozen random draws."""

    name: str
    seed: int
    dt: float
    t_end: float
    graph: TreeGraph
    p0: np.ndarray  # (N, 3)
    R0: np.ndarray  # (N, 3, 3)
    v0: np.ndarray  # (N, 6)
    bodies: tuple  # RigidBodyParams per agent
    disturbances: tuple  # DisturbanceModel per agent
    noises: tuple  # NoiseModel per agent
    gains: tuple  # ControllerGains per agent
    edge_specs: tuple  # EdgeSpec per edge
    vf_l: float
    vf_rho_inf: float
    vf_rho0_scale: float
    vf_rho0_offset: float
    vf_rho0_explicit: float | None
    drawn: dict = field(repr=False)
    raw: dict = field(repr=False)

    @property
    def n_agents(self) -> int:
        return self.graph.n_agents

    @property
    def n_edges(self) -> int:
        return self.graph.n_edges

    def digest(self) -> str:
        """Hash of everything that determines a run (config + drawn values)."""
        blob = json.dumps(
            {
                "raw": self.raw,
                "seed": self.seed,
                "drawn": {
                    k: [None if x is None else repr(float(x)) for x in v]
                    for k, v in self.drawn.items()
                },
            },
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()

    def stacked(self) -> dict:
        """Per-agent parameter arrays for the batched inner loop."""
        n = self.n_agents
        J = np.stack([np.asarray(b.inertia, dtype=np.float64) for b in self.bodies])
        gravity = np.stack([np.asarray(b.gravity_vec, dtype=np.float64) for b in self.bodies])
        return {
            "mass": np.array([b.mass for b in self.bodies]),
            "inertia": J,
            "inertia_inv": np.linalg.inv(J),
            "gravity": None if not gravity.any() else gravity,
            "delta": np.array([g.delta for g in self.gains]),
            "gamma": np.array([g.gamma for g in self.gains]),
            "A_w": np.array([d.amplitude for d in self.disturbances]),
            "om_w": np.array([d.omega for d in self.disturbances]),
            "ph_w": np.array([d.phi for d in self.disturbances]),
            "A_n": np.array([m.amplitude for m in self.noises]),
            "om_n": np.array([m.omega for m in self.noises]),
            "ph_n": np.array([m.phi for m in self.noises]),
            "specs": ctrl.stack_edge_specs(self.edge_specs),
            "scatter_idx": ctrl.scatter_index(self.graph),
            "n": n,
        }


def _draw_agent_params(seed: int, index: int) -> np.ndarray:
    key = np.array([seed, index], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.random(len(_DRAW_ORDER))


def _resolve(entry, u: float, what: str):
    """A config value is either a number or {"uniform": [lo, hi]}."""
    if isinstance(entry, dict):
        if set(entry) != {"uniform"}:
            raise ValidationError(f"{what}: expected a number or {{'uniform': [lo, hi]}}, got {entry!r}")
        lo, hi = float(entry["uniform"][0]), float(entry["uniform"][1])
        if not hi > lo:
            raise ValidationError(f"{what}: empty uniform range [{lo}, {hi}]")
        return lo + u * (hi - lo), True
    return float(entry), False


def _as_rotation(values, what: str) -> np.ndarray:
    R = np.asarray(values, dtype=np.float64)
    if R.size != 9:
        raise ValidationError(f"{what}: need 9 row-major reals, got {R.size}")
    R = R.reshape(3, 3)
    if not is_rotation(R, ROT_TOL):
        raise ValidationError(
            f"{what}: not a rotation within {ROT_TOL:.0e} "
            f"(||R^T R - I||_F = {float(orthonormality_defect(R)):.2e})"
        )
    return R


def scenario_from_dict(raw: dict, seed: int | None = None) -> Scenario:
    """Validate a parsed scenario dict and freeze its random draws."""
    if raw.get("schema") != SCHEMA_VERSION:
        raise ValidationError(f"schema: expected {SCHEMA_VERSION}, got {raw.get('schema')!r}")
    try:
        name = str(raw.get("name", "scenario"))
        seed = int(raw["seed"]) if seed is None else int(seed)
        dt = float(raw["dt"])
        t_end = float(raw["t_end"])
        edges_1b = raw["edges"]
        agents_cfg = raw["agents"]
    except KeyError as exc:
        raise ValidationError(f"missing required field {exc}") from exc
    if not (0 <= seed < 2**64):
        raise ValidationError(f"seed: must fit in 64 bits, got {seed}")
    if dt <= 0.0 or t_end <= 0.0 or t_end < dt:
        raise ValidationError(f"need 0 < dt <= t_end, got dt={dt}, t_end={t_end}")

    n = len(agents_cfg)
    graph = validate_tree(n, [(int(i) - 1, int(j) - 1) for i, j in edges_1b])

    p0 = np.zeros((n, 3))
    R0 = np.zeros((n, 3, 3))
    v0 = np.zeros((n, 6))
    bodies, dists, noises, gains = [], [], [], []
    drawn: dict[str, list] = {k: [] for k in _DRAW_ORDER}
    for i, cfg in enumerate(agents_cfg):
        where = f"agents[{i + 1}]"
        try:
            u = _draw_agent_params(seed, i)
            p0[i] = np.asarray(cfg["p0"], dtype=np.float64)
            R0[i] = _as_rotation(cfg["R0"], f"{where}.R0")
            v0[i] = np.asarray(cfg.get("v0", np.zeros(6)), dtype=np.float64)
            if v0[i].size != 6:
                raise ValidationError(f"{where}.v0: need 6 components")

            mass, mass_rand = _resolve(cfg["mass"], u[0], f"{where}.mass")
            drawn["mass"].append(mass if mass_rand else None)
            if isinstance(cfg["inertia"], dict):
                jd = [_resolve(cfg["inertia"], u[1 + ax], f"{where}.inertia")[0] for ax in range(3)]
                inertia = np.diag(jd)
                for ax, key in enumerate(("inertia_x", "inertia_y", "inertia_z")):
                    drawn[key].append(jd[ax])
            else:
                inertia = np.asarray(cfg["inertia"], dtype=np.float64)
                if inertia.size != 9:
                    raise ValidationError(f"{where}.inertia: need 9 row-major reals or a uniform range")
                inertia = inertia.reshape(3, 3)
                for key in ("inertia_x", "inertia_y", "inertia_z"):
                    drawn[key].append(None)

            def _model(entry, base_slot, prefix):
                if not isinstance(entry, dict):
                    raise ValidationError(
                        f"{where}.{prefix}: expected {{'amplitude', 'omega', 'phi'}} or "
                        f"{{'uniform': [lo, hi]}}, got {entry!r}"
                    )
                out = []
                for off, param in enumerate(("amplitude", "omega", "phi")):
                    src = entry if "uniform" in entry else entry[param]
                    val, was_rand = _resolve(src, u[base_slot + off], f"{where}.{prefix}.{param}")
                    drawn[f"{prefix}_{param}"].append(val if was_rand else None)
                    out.append(val)
                return out

            dists.append(DisturbanceModel(*_model(cfg["disturbance"], 4, "dist")))
            noises.append(NoiseModel(*_model(cfg["noise"], 7, "noise")))
            bodies.append(
                RigidBodyParams(
                    mass=mass,
                    inertia=inertia,
                    radius=float(cfg["radius"]),
                    sensing_radius=float(cfg["sensing_radius"]),
                    gravity_vec=np.asarray(cfg.get("gravity", [0.0, 0.0, 0.0]), dtype=np.float64),
                )
            )
            gains.append(ctrl.ControllerGains(delta=float(cfg["delta"]), gamma=float(cfg["gamma"])))
        except KeyError as exc:
            raise ValidationError(f"{where}: missing field {exc}") from exc

    max_pair = max(b1.radius + b2.radius for b1 in bodies for b2 in bodies)
    for i, b in enumerate(bodies):
        if not b.sensing_radius > max_pair:
            raise ValidationError(
                f"agents[{i + 1}].sensing_radius: need s_i > max pairwise radius sum "
                f"{max_pair}, got {b.sensing_radius}"
            )

    specs_cfg = raw["edge_specs"]
    if isinstance(specs_cfg, dict):
        specs_cfg = [specs_cfg] * graph.n_edges
    if len(specs_cfg) != graph.n_edges:
        raise ValidationError(
            f"edge_specs: need one spec (or a single shared spec) per edge, "
            f"got {len(specs_cfg)} for {graph.n_edges} edges"
        )
    edge_specs = []
    for k, (tail, head) in enumerate(graph.edges()):
        cfg = specs_cfg[k]
        where = f"edge_specs[{k + 1}] (edge {tail + 1}-{head + 1})"
        d_col = bodies[tail].radius + bodies[head].radius
        d_con = min(bodies[tail].sensing_radius, bodies[head].sensing_radius)
        try:
            R_des = _as_rotation(cfg["R_des"], f"{where}.R_des")
            psi0 = psi_error(R0[tail], R0[head], R_des)
            spec = make_edge_spec(
                d_col=d_col,
                d_des=float(cfg["d_des"]),
                d_con=d_con,
                R_des=R_des,
                rho_e_inf=float(cfg["rho_e_inf"]),
                l_e=float(cfg["l_e"]),
                psi0=psi0,
                rho_psi0=float(cfg["rho_psi_0"]),
                rho_psi_inf=float(cfg["rho_psi_inf"]),
                l_psi=float(cfg["l_psi"]),
            )
        except KeyError as exc:
            raise ValidationError(f"{where}: missing field {exc}") from exc
        dist0 = float(norm3(p0[head] - p0[tail]))
        if not (d_col < dist0 < d_con):
            raise ValidationError(
                f"{where}: initial distance must satisfy d_col < |p_head(0) - p_tail(0)| "
                f"< d_con, got {d_col} < {dist0} < {d_con}"
            )
        edge_specs.append(spec)

    vf = raw.get("velocity_funnel", {})
    scenario = Scenario(
        name=name,
        seed=seed,
        dt=dt,
        t_end=t_end,
        graph=graph,
        p0=p0,
        R0=R0,
        v0=v0,
        bodies=tuple(bodies),
        disturbances=tuple(dists),
        noises=tuple(noises),
        gains=tuple(gains),
        edge_specs=tuple(edge_specs),
        vf_l=float(vf.get("l", 0.2)),
        vf_rho_inf=float(vf.get("rho_inf", 0.1)),
        vf_rho0_scale=float(vf.get("rho0_scale", 2.0)),
        vf_rho0_offset=float(vf.get("rho0_offset", 1.0)),
        vf_rho0_explicit=(float(vf["rho0"]) if "rho0" in vf else None),
        drawn={k: v for k, v in drawn.items() if any(x is not None for x in v)},
        raw=raw,
    )
    # Velocity funnel feasibility is checked here so load-time validation
    # covers every hypothesis the containment guarantee needs.
    try:
        initial_state(scenario)
    except FunnelViolation as exc:
        raise ValidationError(f"initial state violates a funnel: {exc}") from exc
    return scenario


def load_scenario(path, seed: int | None = None) -> Scenario:
    """Parse and validate a scenario JSON file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read scenario file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"scenario file {path} is not valid JSON: {exc}") from exc
    return scenario_from_dict(raw, seed=seed)


def transformed(scenario: Scenario, rotation, translation) -> Scenario:
    """Scenario with all world-frame data moved by one rigid transform.

    Positions, initial rotations, and gravity vectors transform; relative
    targets, gains, funnels, and seeds are untouched.  Used by the
    equivariance tests.
    """
    Q = np.asarray(rotation, dtype=np.float64)
    tau = np.asarray(translation, dtype=np.float64)
    raw = json.loads(json.dumps(scenario.raw))
    for i, cfg in enumerate(raw["agents"]):
        cfg["p0"] = (rot_apply(Q, scenario.p0[i]) + tau).tolist()
        cfg["R0"] = mat_mul3(Q, scenario.R0[i]).reshape(9).tolist()
        g = np.asarray(scenario.bodies[i].gravity_vec, dtype=np.float64)
        cfg["gravity"] = rot_apply(Q, g).tolist()
    return scenario_from_dict(raw, seed=scenario.seed)


# --- state and stepping -----------------------------------------------------


@dataclass(frozen=True)
class SimState:
    """Integrator state plus the velocity funnel frozen at t = 0."""

    p: np.ndarray  # (N, 3)
    R: np.ndarray  # (N, 3, 3)
    v: np.ndarray  # (N, 6)
    vf: PerformanceFunction  # (N, 6) fields
    repairs: int = 0


@dataclass(frozen=True)
class ControlEval:
    """Everything the controller produced at one sampling instant."""

    rel_pos: np.ndarray  # (K, 3)
    rel_rot: np.ndarray  # (K, 3, 3)
    e: np.ndarray
    psi: np.ndarray
    dist: np.ndarray
    rho_e: np.ndarray
    rho_psi: np.ndarray
    v_meas: np.ndarray  # (N, 6)
    v_des: np.ndarray  # (N, 6)
    u: np.ndarray  # (N, 6)


def _measure_all(p, R, g: TreeGraph):
    p_rel = p[g.heads] - p[g.tails]
    rel_pos = rot_t_apply(R[g.tails], p_rel)
    rel_rot = mat_t_mul3(R[g.heads], R[g.tails])
    return rel_pos, rel_rot


def _noise_factor(A, om, ph, p1, R, t):
    p1n = (abs(p1[0]) + abs(p1[1])) + abs(p1[2])
    tr = (R[:, 0, 0] + R[:, 1, 1]) + R[:, 2, 2]
    return A * np.sin(p1n * tr * om * t + ph)


def _funnels_at(arrs, vf, t: float):
    """(rho_e, rho_psi, rho_v) at one stage time; shared between stages."""
    sa = arrs["specs"]
    return sa["rho_e"].eval(t), sa["rho_psi"].eval(t), vf.eval(t)


def _stage(p, R, v, vf, arrs, g: TreeGraph, t: float, funnels=None, full=False):
    """Controller and plant at one integrator stage.

    The control law is re-evaluated from the stage state at the stage time.
    Sampling it once per step and holding the wrench is not an option here:
    the funnel slopes grow like 1/rho(t)^2 as the funnels contract, and
    under the published constants a zero-order-hold loop at dt = 1e-3 goes
    unstable mid-run, while the continuous law integrates cleanly.

    Returns (pdot, vdot) or, with ``full``, (ControlEval, pdot, vdot).
    """
    rho_e, rho_psi, rho_v = _funnels_at(arrs, vf, t) if funnels is None else funnels
    rel_pos, rel_rot = _measure_all(p, R, g)
    terms = ctrl.batch_edge_terms(rel_pos, rel_rot, arrs["specs"], t,
                                  rho_e=rho_e, rho_psi=rho_psi)
    v_des = ctrl.batch_desired_velocity(
        g, terms, rel_pos, rel_rot, arrs["delta"], arrs["scatter_idx"]
    )
    # disturbance and measurement noise share the |p1|_1 tr(R) modulation base
    base = ((abs(p[0, 0]) + abs(p[0, 1])) + abs(p[0, 2])) * (
        (R[:, 0, 0] + R[:, 1, 1]) + R[:, 2, 2]
    )
    v_meas = v + (arrs["A_n"] * np.sin(base * (arrs["om_n"] * t) + arrs["ph_n"]))[:, None] * v
    u = ctrl.batch_control_input(v_meas - v_des, rho_v, arrs["gamma"], t)
    w = (arrs["A_w"] * np.sin(base * (arrs["om_w"] * t) + arrs["ph_w"]))[:, None] * v
    a = batched_acceleration(
        arrs["mass"], arrs["inertia"], arrs["inertia_inv"], R, v, u, w, arrs["gravity"]
    )
    pdot = rot_apply(R, v[:, :3])
    if not full:
        return pdot, a
    ev = ControlEval(
        rel_pos=rel_pos,
        rel_rot=rel_rot,
        e=terms["e"],
        psi=terms["psi"],
        dist=terms["dist"],
        rho_e=rho_e,
        rho_psi=rho_psi,
        v_meas=v_meas,
        v_des=v_des,
        u=u,
    )
    return ev, pdot, a


def _advance(p, R, v, t: float, dt: float, derivs, stage1=None):
    """One Munthe-Kaas RK4 step.

    ``derivs(p, R, v, t) -> (pdot, vdot)`` supplies the translational and
    velocity derivatives (closed loop or plant-only); the rotational factor
    advances through dexpinv-corrected stages in the Lie algebra.
    ``stage1`` lets the caller pass the already-evaluated step-start
    derivatives (the sample that gets recorded) to avoid doubling work.
    """
    half = 0.5 * dt
    k1p, k1v = derivs(p, R, v, t) if stage1 is None else stage1
    F1 = v[:, 3:]

    Th2 = half * F1
    R2 = mat_mul3(R, so3_exp(Th2))
    p2, v2 = p + half * k1p, v + half * k1v
    k2p, k2v = derivs(p2, R2, v2, t + half)
    F2 = dexpinv(Th2, v2[:, 3:])

    Th3 = half * F2
    R3 = mat_mul3(R, so3_exp(Th3))
    p3, v3 = p + half * k2p, v + half * k2v
    k3p, k3v = derivs(p3, R3, v3, t + half)
    F3 = dexpinv(Th3, v3[:, 3:])

    Th4 = dt * F3
    R4 = mat_mul3(R, so3_exp(Th4))
    p4, v4 = p + dt * k3p, v + dt * k3v
    k4p, k4v = derivs(p4, R4, v4, t + dt)
    F4 = dexpinv(Th4, v4[:, 3:])

    sixth = dt / 6.0
    p_new = p + sixth * ((k1p + 2.0 * k2p) + (2.0 * k3p + k4p))
    v_new = v + sixth * ((k1v + 2.0 * k2v) + (2.0 * k3v + k4v))
    Theta = sixth * ((F1 + 2.0 * F2) + (2.0 * F3 + F4))
    R_new = mat_mul3(R, so3_exp(Theta))

    defect = orthonormality_defect(R_new)
    n_rep = int(np.count_nonzero(defect > ROT_REPAIR_TOL))
    if n_rep:
        mask = defect > ROT_REPAIR_TOL
        R_new[mask] = repair_rotation(R_new[mask])
        log.debug("repaired %d rotation(s) at t=%.6f (defect %.3e)", n_rep, t, float(defect.max()))
    return p_new, R_new, v_new, n_rep, float(defect.max())


def _closed_loop_derivs(vf, arrs, g: TreeGraph):
    """Stage-derivative closure for the controlled multi-agent system."""

    def derivs(p, R, v, t, _cache={}):
        # the two half-step stages share one funnel evaluation
        funnels = _cache.get(t)
        if funnels is None:
            _cache.clear()
            funnels = _funnels_at(arrs, vf, t)
            _cache[t] = funnels
        return _stage(p, R, v, vf, arrs, g, t, funnels=funnels)

    return derivs


def integrate_plant(bodies, p0, R0, v0, dt: float, n_steps: int, wrench=None):
    """Open-loop integration of the bare rigid-body dynamics.

    Runs the same Munthe-Kaas stepper as the closed loop with a user wrench
    ``wrench(p, R, v, t) -> (N, 6)`` (default zero) and no disturbance or
    noise.  Returns the final (p, R, v).  Used for integrator-quality
    studies where a controller would obscure the convergence order.
    """
    mass = np.array([b.mass for b in bodies])
    J = np.stack([np.asarray(b.inertia, dtype=np.float64) for b in bodies])
    J_inv = np.linalg.inv(J)
    gravity = np.stack([np.asarray(b.gravity_vec, dtype=np.float64) for b in bodies])
    if not gravity.any():
        gravity = None

    def derivs(p, R, v, t):
        u = np.zeros_like(v) if wrench is None else wrench(p, R, v, t)
        a = batched_acceleration(mass, J, J_inv, R, v, u, np.zeros_like(v), gravity)
        return rot_apply(R, v[:, :3]), a

    p = np.array(p0, dtype=np.float64, copy=True)
    R = np.array(R0, dtype=np.float64, copy=True)
    v = np.array(v0, dtype=np.float64, copy=True)
    for n in range(n_steps):
        p, R, v, _, _ = _advance(p, R, v, n * dt, dt, derivs)
    return p, R, v


def initial_state(scenario: Scenario) -> SimState:
    """State at t = 0 with the velocity funnel sized from e_v(0)."""
    arrs = scenario.stacked()
    g = scenario.graph
    p, R, v = scenario.p0.copy(), scenario.R0.copy(), scenario.v0.copy()
    rel_pos, rel_rot = _measure_all(p, R, g)
    terms = ctrl.batch_edge_terms(rel_pos, rel_rot, arrs["specs"], 0.0)
    v_des0 = ctrl.batch_desired_velocity(
        g, terms, rel_pos, rel_rot, arrs["delta"], arrs["scatter_idx"]
    )
    v_meas0 = v + _noise_factor(arrs["A_n"], arrs["om_n"], arrs["ph_n"], p[0], R, 0.0)[:, None] * v
    e_v0 = np.abs(v_meas0 - v_des0)
    if scenario.vf_rho0_explicit is not None:
        rho0 = np.full((g.n_agents, 6), scenario.vf_rho0_explicit)
    else:
        rho0 = scenario.vf_rho0_scale * e_v0 + scenario.vf_rho0_offset
    if np.any(rho0 <= e_v0):
        raise ValidationError(
            "velocity_funnel: rho0 must exceed |e_v(0)| componentwise "
            f"(max |e_v(0)| = {float(e_v0.max()):.6g})"
        )
    vf = PerformanceFunction(
        rho0,
        np.full((g.n_agents, 6), scenario.vf_rho_inf),
        np.full((g.n_agents, 6), scenario.vf_l),
    )
    return SimState(p=p, R=R, v=v, vf=vf)


def step(state: SimState, scenario: Scenario, t: float, dt: float) -> SimState:
    """Advance the closed loop from t to t + dt."""
    arrs = scenario.stacked()
    derivs = _closed_loop_derivs(state.vf, arrs, scenario.graph)
    p, R, v, n_rep, _ = _advance(state.p, state.R, state.v, t, dt, derivs)
    return replace(state, p=p, R=R, v=v, repairs=state.repairs + n_rep)


# --- traces and summaries ---------------------------------------------------


@dataclass
class Trace:
    """Uniformly sampled closed-loop time series."""

    t: np.ndarray  # (T,)
    p: np.ndarray  # (T, N, 3)
    R: np.ndarray  # (T, N, 3, 3)
    v: np.ndarray  # (T, N, 6)
    v_meas: np.ndarray | None  # (T, N, 6); not serialized
    v_des: np.ndarray  # (T, N, 6)
    u: np.ndarray  # (T, N, 6)
    e: np.ndarray  # (T, K)
    psi: np.ndarray  # (T, K)
    dist: np.ndarray  # (T, K)
    lb_e: np.ndarray  # (T, K)  -C_col rho_e(t)
    ub_e: np.ndarray  # (T, K)   C_con rho_e(t)
    rho_psi: np.ndarray  # (T, K)
    repairs: np.ndarray | None  # (T,) repairs during the step ending here

    @property
    def n_rows(self) -> int:
        return len(self.t)

    @property
    def n_agents(self) -> int:
        return self.p.shape[1]

    @property
    def n_edges(self) -> int:
        return self.e.shape[1]

    def header(self) -> list[str]:
        cols = ["t"]
        for i in range(1, self.n_agents + 1):
            cols += [f"p_{i}_{ax}" for ax in "xyz"]
            cols += [f"R_{i}_{r}{c}" for r in (1, 2, 3) for c in (1, 2, 3)]
            cols += [f"v_{i}_{l}" for l in range(1, 7)]
            cols += [f"vdes_{i}_{l}" for l in range(1, 7)]
            cols += [f"u_{i}_{l}" for l in range(1, 7)]
        for k in range(1, self.n_edges + 1):
            cols += [f"e_{k}", f"psi_{k}", f"dist_{k}", f"lb_e_{k}", f"ub_e_{k}", f"rho_psi_{k}"]
        return cols

    def matrix(self) -> np.ndarray:
        T, N = self.n_rows, self.n_agents
        parts = [self.t[:, None]]
        for i in range(N):
            parts += [
                self.p[:, i, :],
                self.R[:, i].reshape(T, 9),
                self.v[:, i, :],
                self.v_des[:, i, :],
                self.u[:, i, :],
            ]
        for k in range(self.n_edges):
            parts.append(
                np.column_stack(
                    [self.e[:, k], self.psi[:, k], self.dist[:, k],
                     self.lb_e[:, k], self.ub_e[:, k], self.rho_psi[:, k]]
                )
            )
        return np.concatenate(parts, axis=1)

    def to_csv(self, path) -> None:
        # 17 significant digits: floats round-trip exactly through the file.
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(self.header()) + "\n")
            np.savetxt(fh, self.matrix(), fmt="%.17g", delimiter=",")

    def sliced(self, rows: int) -> "Trace":
        kw = {}
        for name in ("t", "p", "R", "v", "v_meas", "v_des", "u", "e", "psi",
                     "dist", "lb_e", "ub_e", "rho_psi", "repairs"):
            arr = getattr(self, name)
            kw[name] = arr[:rows] if arr is not None else None
        return Trace(**kw)


def trace_from_csv(path) -> Trace:
    """Rebuild a Trace from its CSV serialization (v_meas is not stored)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    except OSError as exc:
        raise ParseError(f"cannot read trace file {path}: {exc}") from exc
    except ValueError as exc:
        raise ParseError(f"trace file {path} is not numeric CSV: {exc}") from exc
    n = sum(1 for c in header if c.startswith("p_") and c.endswith("_x"))
    k = sum(1 for c in header if c.startswith("e_"))
    expected = 1 + n * 30 + k * 6
    if len(header) != expected or data.shape[1] != expected:
        raise ParseError(
            f"trace header does not match its layout: {len(header)} columns, "
            f"expected {expected} for N={n}, K={k}"
        )
    T = data.shape[0]
    p = np.empty((T, n, 3))
    R = np.empty((T, n, 3, 3))
    v = np.empty((T, n, 6))
    v_des = np.empty((T, n, 6))
    u = np.empty((T, n, 6))
    col = 1
    for i in range(n):
        p[:, i] = data[:, col : col + 3]
        R[:, i] = data[:, col + 3 : col + 12].reshape(T, 3, 3)
        v[:, i] = data[:, col + 12 : col + 18]
        v_des[:, i] = data[:, col + 18 : col + 24]
        u[:, i] = data[:, col + 24 : col + 30]
        col += 30
    edge_block = data[:, col:].reshape(T, k, 6)
    return Trace(
        t=data[:, 0],
        p=p,
        R=R,
        v=v,
        v_meas=None,
        v_des=v_des,
        u=u,
        e=edge_block[:, :, 0],
        psi=edge_block[:, :, 1],
        dist=edge_block[:, :, 2],
        lb_e=edge_block[:, :, 3],
        ub_e=edge_block[:, :, 4],
        rho_psi=edge_block[:, :, 5],
        repairs=None,
    )


def n_steps_for(t_end: float, dt: float) -> int:
    # Tolerant floor: 5.0/0.001 evaluates below 5000 in floats.
    return int(math.floor(t_end / dt + 1e-9))


def run(scenario: Scenario, dt: float | None = None, t_end: float | None = None):
    """Integrate the closed loop and return (Trace, summary dict).

    On a funnel violation the partial trace and summary are attached to the
    raised FunnelViolation as ``partial_trace`` / ``partial_summary``.
    """
    dt = scenario.dt if dt is None else float(dt)
    t_end = scenario.t_end if t_end is None else float(t_end)
    n_steps = n_steps_for(t_end, dt)
    g = scenario.graph
    arrs = scenario.stacked()
    state = initial_state(scenario)
    p, R, v, vf = state.p, state.R, state.v, state.vf

    T = n_steps + 1
    N, K = g.n_agents, g.n_edges
    tr = Trace(
        t=np.arange(T) * dt,
        p=np.empty((T, N, 3)),
        R=np.empty((T, N, 3, 3)),
        v=np.empty((T, N, 6)),
        v_meas=np.empty((T, N, 6)),
        v_des=np.empty((T, N, 6)),
        u=np.empty((T, N, 6)),
        e=np.empty((T, K)),
        psi=np.empty((T, K)),
        dist=np.empty((T, K)),
        lb_e=np.empty((T, K)),
        ub_e=np.empty((T, K)),
        rho_psi=np.empty((T, K)),
        repairs=np.zeros(T, dtype=np.int64),
    )
    C_col = arrs["specs"]["C_col"]
    C_con = arrs["specs"]["C_con"]

    started = _time.perf_counter()
    derivs = _closed_loop_derivs(vf, arrs, g)
    repairs_total = 0
    max_defect = 0.0
    rows_done = 0
    try:
        for nstep in range(T):
            t = float(tr.t[nstep])
            ev, k1p, k1v = _stage(p, R, v, vf, arrs, g, t, full=True)
            tr.p[nstep], tr.R[nstep], tr.v[nstep] = p, R, v
            tr.v_meas[nstep], tr.v_des[nstep], tr.u[nstep] = ev.v_meas, ev.v_des, ev.u
            tr.e[nstep], tr.psi[nstep], tr.dist[nstep] = ev.e, ev.psi, ev.dist
            tr.lb_e[nstep] = -C_col * ev.rho_e
            tr.ub_e[nstep] = C_con * ev.rho_e
            tr.rho_psi[nstep] = ev.rho_psi
            rows_done = nstep + 1
            if nstep == n_steps:
                break
            p, R, v, n_rep, defect = _advance(p, R, v, t, dt, derivs, stage1=(k1p, k1v))
            repairs_total += n_rep
            tr.repairs[nstep + 1] = n_rep
            if defect > max_defect:
                max_defect = defect
    except FunnelViolation as exc:
        partial = tr.sliced(rows_done)
        exc.partial_trace = partial
        exc.partial_summary = summarize(
            scenario, partial, dt, t_end,
            runtime_s=_time.perf_counter() - started,
            repairs=repairs_total, max_defect=max_defect, violation=exc,
        )
        log.error("run aborted: %s", exc)
        raise

    runtime = _time.perf_counter() - started
    summary = summarize(scenario, tr, dt, t_end, runtime_s=runtime,
                        repairs=repairs_total, max_defect=max_defect, violation=None)
    log.info(
        "run '%s' done: %d steps, %.3fs, %d repairs, max drift %.2e",
        scenario.name, n_steps, runtime, repairs_total, max_defect,
    )
    return tr, summary


def summarize(scenario: Scenario, tr: Trace, dt: float, t_end: float, *,
              runtime_s: float, repairs: int, max_defect: float, violation) -> dict:
    """Run summary: convergence numbers, funnel margins, reproducibility info."""
    edges = []
    for k, (tail, head) in enumerate(scenario.graph.edges()):
        margin_e = np.minimum(tr.e[:, k] - tr.lb_e[:, k], tr.ub_e[:, k] - tr.e[:, k])
        margin_psi = tr.rho_psi[:, k] - tr.psi[:, k]
        edges.append(
            {
                "edge": [tail + 1, head + 1],
                "dist_min": float(tr.dist[:, k].min()),
                "dist_max": float(tr.dist[:, k].max()),
                "e_final": float(tr.e[-1, k]),
                "psi_final": float(tr.psi[-1, k]),
                "margin_e_min": float(margin_e.min()),
                "margin_psi_min": float(margin_psi.min()),
            }
        )
    return {
        "name": scenario.name,
        "seed": scenario.seed,
        "rng": RNG_ID,
        "scenario_digest": scenario.digest(),
        "dt": dt,
        "t_end": t_end,
        "rows": tr.n_rows,
        "runtime_s": runtime_s,
        "violations": 0 if violation is None else 1,
        "violation": None if violation is None else str(violation),
        "rotation_repairs": repairs,
        "max_rotation_defect": max_defect,
        "edges": edges,
        "drawn_parameters": {
            k: [None if x is None else float(x) for x in v] for k, v in scenario.drawn.items()
        },
    }


def _sweep_one(args):
    raw, seed, dt, t_end = args
    scenario = scenario_from_dict(raw, seed=seed)
    try:
        _, summary = run(scenario, dt=dt, t_end=t_end)
    except FunnelViolation as exc:
        summary = exc.partial_summary
    return summary


def sweep(raw: dict, n_seeds: int, base_seed: int | None = None,
          dt: float | None = None, t_end: float | None = None, n_jobs: int = 1):
    """Re-run one scenario under n_seeds consecutive seeds.

    Returns (aggregate dict, list of per-seed summaries).  With n_jobs > 1
    the runs execute in worker processes; results are always collected in
    seed order, so the aggregate is deterministic either way.
    """
    base = int(raw["seed"]) if base_seed is None else int(base_seed)
    jobs = [(raw, base + i, dt, t_end) for i in range(n_seeds)]
    if n_jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            summaries = list(pool.map(_sweep_one, jobs))
    else:
        summaries = [_sweep_one(j) for j in jobs]
    for summary in summaries:
        log.info(
            "sweep seed %d: %s", summary["seed"],
            "ok" if summary["violations"] == 0 else "VIOLATION",
        )
    aggregate = {
        "scenario": str(raw.get("name", "scenario")),
        "seeds": [base + i for i in range(n_seeds)],
        "passed": sum(1 for s in summaries if s["violations"] == 0),
        "total": n_seeds,
        "failures": [
            {"seed": s["seed"], "reason": s["violation"]}
            for s in summaries if s["violations"]
        ],
    }
    return aggregate, summaries
