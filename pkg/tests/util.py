"""Shared test helpers: funnel-feasible random multi-agent states."""

from __future__ import annotations

import numpy as np

from se3form.se3 import random_rotation, so3_exp


def feasible_state(rng, g, specs, t, margin=0.8):
    """Random (p, R) with every edge error strictly inside its funnel at t.

    Walks the tree edge by edge (each edge introduces one new agent) and
    places the new agent at a distance / relative orientation drawn inside
    ``margin`` of the funnel widths at time t.
    """
    n = g.n_agents
    p = np.zeros((n, 3))
    R = np.zeros((n, 3, 3))
    assigned = {0}
    R[0] = random_rotation(rng)
    for k, (tail, head) in enumerate(g.edges()):
        spec = specs[k]
        rho_e = spec.rho_e.eval(t)
        rho_psi = spec.rho_psi.eval(t)
        e = rng.uniform(-margin * spec.C_col * rho_e, margin * spec.C_con * rho_e)
        dist = float(np.sqrt(e + spec.d_des**2))
        psi = rng.uniform(0.0, min(margin * rho_psi, 1.95))
        theta = float(np.arccos(1.0 - psi))
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        # Q := R_des^T R_head^T R_tail = exp(theta S(axis)) by construction
        if tail in assigned:
            p[head] = p[tail] + dist * direction
            R[head] = R[tail] @ so3_exp(-theta * axis) @ spec.R_des.T
            assigned.add(head)
        else:
            p[tail] = p[head] + dist * direction
            R[tail] = R[head] @ spec.R_des @ so3_exp(theta * axis)
            assigned.add(tail)
    assert assigned == set(range(n))
    return p, R
