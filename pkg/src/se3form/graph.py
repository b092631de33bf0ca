"""Tree sensing graphs: validation, incidence matrices, edge orientation.

Edges are stored as ordered (tail, head) pairs with 0-based agent indices;
the tail is always the first element of the configured pair and edge
numbering follows configuration order, so the incidence matrix is a
deterministic function of the input file.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadIndex, HasCycle, NotConnected
from .se3 import identity3, mat_t_mul3


@dataclass(frozen=True)
class TreeGraph:
    """Validated tree over agents 0..n_agents-1 with K = N-1 oriented edges."""

    n_agents: int
    tails: np.ndarray  # (K,) int
    heads: np.ndarray  # (K,) int
    incident: tuple = field(repr=False, default=())  # per agent: tuple of edge ids

    @property
    def n_edges(self) -> int:
        return len(self.tails)

    def edges(self):
        """Edges as (tail, head) pairs, configuration order, 0-based."""
        return list(zip(self.tails.tolist(), self.heads.tolist()))


def validate_tree(n: int, edges) -> TreeGraph:
    """Check that (n, edges) is a tree and freeze it.

    ``edges`` is a sequence of (tail, head) pairs with 0-based indices.
    Raises BadIndex / HasCycle / NotConnected naming the offending edge or
    component; cycles are never pruned silently.
    """
    if n < 2:
        raise BadIndex(f"need at least 2 agents, got n={n}")
    tails = np.empty(len(edges), dtype=np.intp)
    heads = np.empty(len(edges), dtype=np.intp)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    seen = set()
    for k, (i, j) in enumerate(edges):
        if not (0 <= i < n) or not (0 <= j < n):
            raise BadIndex(f"edge {k + 1} ({i + 1},{j + 1}) references an agent outside 1..{n}")
        if i == j:
            raise BadIndex(f"edge {k + 1} is a self-loop on agent {i + 1}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise HasCycle(f"edge {k + 1} ({i + 1},{j + 1}) duplicates an earlier edge")
        seen.add(key)
        ri, rj = find(i), find(j)
        if ri == rj:
            raise HasCycle(f"edge {k + 1} ({i + 1},{j + 1}) closes a cycle")
        parent[ri] = rj
        tails[k], heads[k] = i, j

    components: dict[int, list[int]] = {}
    for a in range(n):
        components.setdefault(find(a), []).append(a)
    if len(components) > 1:
        stray = min(components.values(), key=len)
        raise NotConnected(
            f"graph has {len(components)} components (n={n}, K={len(edges)}); "
            f"agents {[a + 1 for a in stray]} are cut off"
        )

    incident = tuple(
        tuple(k for k in range(len(edges)) if tails[k] == a or heads[k] == a)
        for a in range(n)
    )
    return TreeGraph(n_agents=n, tails=tails, heads=heads, incident=incident)


def incidence(g: TreeGraph) -> np.ndarray:
    """N x K incidence matrix: +1 at each edge's head row, -1 at its tail."""
    D = np.zeros((g.n_agents, g.n_edges), dtype=np.intp)
    D[g.tails, np.arange(g.n_edges)] = -1
    D[g.heads, np.arange(g.n_edges)] = 1
    return D


def alpha(i: int, tail: int, head: int, R_tail, R_head) -> np.ndarray:
    """Edge-to-agent rotation weight used by the desired-velocity law.

    -I for the tail agent, R_head^T R_tail for the head agent, zeros for
    agents not on the edge.
    """
    if i == tail:
        return -identity3()
    if i == head:
        return mat_t_mul3(np.asarray(R_head, dtype=np.float64), np.asarray(R_tail, dtype=np.float64))
    return np.zeros((3, 3))


def orientation_incidence(g: TreeGraph, rotations) -> np.ndarray:
    """Rotation-dressed incidence matrix Rbar^T [D kron I3] Rhat (3N x 3K).

    Rbar stacks every agent's rotation on the block diagonal, Rhat stacks
    each edge's tail rotation.  Shares the singular values of D kron I3.
    """
    R = np.asarray(rotations, dtype=np.float64)
    if R.shape != (g.n_agents, 3, 3):
        raise ValueError(f"expected {g.n_agents} rotations, got shape {R.shape}")
    D = incidence(g)
    out = np.zeros((3 * g.n_agents, 3 * g.n_edges), dtype=np.float64)
    for k in range(g.n_edges):
        Rt = R[g.tails[k]]
        for i in (g.tails[k], g.heads[k]):
            block = D[i, k] * mat_t_mul3(R[i], Rt)
            out[3 * i : 3 * i + 3, 3 * k : 3 * k + 3] = block
    return out


def weighted_laplacian_min_eig(g: TreeGraph, delta) -> float:
    """Smallest eigenvalue of D^T diag(delta) D; positive for every tree."""
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != (g.n_agents,) or np.any(delta <= 0.0):
        raise ValueError("delta must hold one positive weight per agent")
    D = incidence(g).astype(np.float64)
    L = D.T @ (delta[:, None] * D)
    return float(np.linalg.eigvalsh(L)[0])


def random_tree(rng: np.random.Generator, n: int) -> TreeGraph:
    """Random labeled tree on n nodes (uniform random attachment)."""
    edges = []
    for j in range(1, n):
        i = int(rng.integers(0, j))
        edges.append((i, j) if rng.integers(0, 2) == 0 else (j, i))
    return validate_tree(n, edges)
