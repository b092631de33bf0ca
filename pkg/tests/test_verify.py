"""Offline checker tests: funnel re-verification, error kinematics, identities."""

from __future__ import annotations

import copy

import numpy as np
import pytest

from se3form import run, scenario_from_dict
from se3form.errors import SchemaMismatch
from se3form.verify import check_error_dynamics, check_funnels, check_identities

from test_sim import two_agent_raw


def test_clean_trace_passes(sec5_run, sec5_scenario):
    trace, summary, _ = sec5_run
    report = check_funnels(trace, sec5_scenario)
    assert report.ok
    assert report.as_dict() == {"ok": True, "violations": []}
    assert summary["violations"] == 0


def test_online_offline_checkers_agree(sec5_raw):
    # a run the simulator accepts passes the offline checker and vice versa
    raw = copy.deepcopy(sec5_raw)
    raw["t_end"] = 0.3
    scenario = scenario_from_dict(raw, seed=77)
    trace, summary = run(scenario)
    assert summary["violations"] == 0
    assert check_funnels(trace, scenario).ok


def test_synthetic_upper_bound_hit_is_flagged(sec5_run, sec5_scenario):
    trace, _, _ = sec5_run
    doctored = copy.deepcopy(trace)
    row, k = 1200, 2
    ub = sec5_scenario.edge_specs[k].C_con * sec5_scenario.edge_specs[k].rho_e.eval(trace.t[row])
    doctored.e[row, k] = ub  # boundary itself violates (strict inequality)
    report = check_funnels(doctored, sec5_scenario)
    assert not report.ok
    kinds = {r.kind for r in report.records}
    assert kinds == {"distance_error_high"}
    assert f"edge {k + 1}" in report.records[0].where
    assert f"row {row}" in report.records[0].where
    assert report.records[0].margin == pytest.approx(0.0, abs=1e-15)


def test_synthetic_collision_and_singularity_flags(sec5_run, sec5_scenario):
    trace, _, _ = sec5_run
    doctored = copy.deepcopy(trace)
    doctored.dist[42, 0] = sec5_scenario.edge_specs[0].d_col
    doctored.psi[77, 1] = 2.0
    report = check_funnels(doctored, sec5_scenario)
    kinds = {r.kind for r in report.records}
    assert "collision" in kinds
    assert "orientation_error" in kinds and "orientation_singularity" in kinds


def test_schema_mismatch(sec5_run):
    trace, _, _ = sec5_run
    wrong = scenario_from_dict(two_agent_raw())
    with pytest.raises(SchemaMismatch):
        check_funnels(trace, wrong)
    with pytest.raises(SchemaMismatch):
        check_error_dynamics(trace, wrong)


def test_error_dynamics_constant_pose_trace():
    scenario = scenario_from_dict(two_agent_raw())  # exact equilibrium
    trace, _ = run(scenario, t_end=0.05)
    out = check_error_dynamics(trace, scenario)
    assert out["max_residual"] < 1e-12


def test_error_dynamics_residual_is_pure_truncation(sec5_run, sec5_scenario):
    # the recorded trajectory satisfies the error kinematics: switching the
    # probe from a 2nd- to a 4th-order stencil collapses the residual by
    # orders of magnitude, so what remains is differencing error, not a
    # dynamics mismatch
    trace, _, _ = sec5_run
    out = check_error_dynamics(trace, sec5_scenario)
    assert out["max_residual"] < 1e-2
    dt = out["dt"]
    fd4 = (-trace.e[4:] + 8 * trace.e[3:-1] - 8 * trace.e[1:-3] + trace.e[:-4]) / (12 * dt)
    g = sec5_scenario.graph
    from se3form.se3 import dot3, mat_t_mul3, rot_t_apply

    rel_pos = rot_t_apply(trace.R[:, g.tails], trace.p[:, g.heads] - trace.p[:, g.tails])
    rel_rot = mat_t_mul3(trace.R[:, g.heads], trace.R[:, g.tails])
    e_dot = 2.0 * dot3(rel_pos, rot_t_apply(rel_rot, trace.v[:, g.heads, 0:3]) - trace.v[:, g.tails, 0:3])
    res4 = float(np.abs(fd4 - e_dot[2:-2]).max())
    assert res4 < out["max_residual"] / 50.0


def test_error_dynamics_second_order_decay(sec5_raw):
    # refinement study over [0, 1] where all three step sizes integrate
    # cleanly; halving dt divides the residual by ~4
    scenario = scenario_from_dict(sec5_raw)
    res = {}
    for dt in (4e-3, 2e-3, 1e-3):
        trace, _ = run(scenario, dt=dt, t_end=1.0)
        res[dt] = check_error_dynamics(trace, scenario)["max_residual"]
    assert 2.5 < res[4e-3] / res[2e-3] < 6.5
    assert 2.5 < res[2e-3] / res[1e-3] < 6.5


def test_identities_report():
    out = check_identities(samples=1000, seed=0)
    assert out["e_R_identity_max"] < 1e-10
    assert out["exp_inequality_min"] >= -1e-12
    assert out["tree_laplacian_min_eig"] > 1e-12
    assert out["skew_quadratic_max"] < 1e-12 * 100
    assert out["skew_rotation_conjugation_max"] < 1e-12
    assert out["skew_trace_dot_max"] < 1e-12
    assert out["skew_trace_unskew_max"] < 1e-12
    assert out["orientation_incidence_sv_dev_max"] < 1e-10
    assert out["slope_psi_link_max_rel"] < 1e-10
    assert out["slope_v_min"] >= 2.0
