"""Transportation simplex on a spanning-tree basis (the bipartite special
case of the network simplex method).

Minimizes sum C_ij x_ij subject to row sums a and column sums b. The basis
is a spanning tree on the n + m row/column nodes; potentials are obtained
by walking the tree, the entering arc is the most negative reduced cost
(lowest flat index on ties), and after a run of degenerate pivots the
solver switches to Bland's rule for both entering and leaving arcs so that
it cannot cycle.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

MAX_CELLS = 2000 * 2000


class TransportSizeError(ValueError):
    pass


@dataclass
class SimplexResult:
    flow: np.ndarray          # (n, m) dense
    u: np.ndarray             # row potentials
    v: np.ndarray             # column potentials, u_i + v_j <= C_ij
    basis: list
    pivots: int


def northwest_corner(a, b):
    """Staircase basis of exactly n + m - 1 cells (degenerate zeros kept)."""
    n, m = len(a), len(b)
    flow = np.zeros((n, m))
    ra, rb = a.astype(float).copy(), b.astype(float).copy()
    basis = []
    i = j = 0
    while True:
        q = min(ra[i], rb[j])
        flow[i, j] = q
        basis.append((i, j))
        if i == n - 1 and j == m - 1:
            break
        if i == n - 1:
            rb[j] = 0.0
            ra[i] -= q
            j += 1
        elif j == m - 1:
            ra[i] = 0.0
            rb[j] -= q
            i += 1
        elif ra[i] <= rb[j]:
            rb[j] -= q
            ra[i] = 0.0
            i += 1
        else:
            ra[i] -= q
            rb[j] = 0.0
            j += 1
    # absorb the last cell's roundoff so rows and columns close exactly
    flow[n - 1, m - 1] = max(flow[n - 1, m - 1], 0.0)
    return flow, basis


def _potentials(C, basis, n, m):
    adj = [[] for _ in range(n + m)]
    for (i, j) in basis:
        adj[i].append(n + j)
        adj[n + j].append(i)
    u = np.full(n, np.nan)
    v = np.full(m, np.nan)
    u[0] = 0.0
    queue = deque([0])
    while queue:
        node = queue.popleft()
        if node < n:
            for cj in adj[node]:
                j = cj - n
                if np.isnan(v[j]):
                    v[j] = C[node, j] - u[node]
                    queue.append(cj)
        else:
            j = node - n
            for i in adj[node]:
                if np.isnan(u[i]):
                    u[i] = C[i, j] - v[j]
                    queue.append(i)
    if np.isnan(u).any() or np.isnan(v).any():
        raise RuntimeError("basis is not a spanning tree")
    return u, v, adj


def _tree_path(adj, start, goal):
    """Node path from ``start`` to ``goal`` in the basis tree."""
    parent = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for nb in adj[node]:
            if nb not in parent:
                parent[nb] = node
                queue.append(nb)
    path = [goal]
    while path[-1] != start:
        path.append(parent[path[-1]])
    return path[::-1]


def transport_simplex(a, b, C, flow=None, basis=None, max_pivots=None,
                      degenerate_switch=50) -> SimplexResult:
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    C = np.asarray(C, float)
    n, m = C.shape
    if n * m > MAX_CELLS:
        raise TransportSizeError(
            f"instance too large: {n} x {m} exceeds 2000 x 2000")
    if flow is None:
        flow, basis = northwest_corner(a, b)
    else:
        flow = flow.copy()
    basis = list(basis)
    scale = 1.0 + float(np.max(np.abs(C)))
    tol = 1e-12 * scale
    if max_pivots is None:
        max_pivots = 50 * (n + m) * max(n, m) + 1000

    pivots = 0
    degenerate_run = 0
    while True:
        u, v, adj = _potentials(C, basis, n, m)
        red = C - u[:, None] - v[None, :]
        bland = degenerate_run >= degenerate_switch
        if bland:
            cand = np.flatnonzero(red.reshape(-1) < -tol)
            if len(cand) == 0:
                break
            k = int(cand[0])
        else:
            k = int(np.argmin(red))
            if red.flat[k] >= -tol:
                break
        i0, j0 = divmod(k, m)
        if pivots >= max_pivots:
            raise RuntimeError("transport simplex exceeded pivot budget")

        # cycle: entering (i0, j0) then tree path from column j0 back to row i0
        nodes = _tree_path(adj, n + j0, i0)
        cells = []
        for p, q in zip(nodes[:-1], nodes[1:]):
            cells.append((q, p - n) if p >= n else (p, q - n))
        minus = cells[0::2]
        plus = cells[1::2]
        theta = min(flow[c] for c in minus)
        ties = [c for c in minus if flow[c] <= theta]
        leave = min(ties) if bland else ties[0]
        for c in plus:
            flow[c] += theta
        for c in minus:
            flow[c] -= theta
        flow[leave] = 0.0
        flow[i0, j0] = theta
        basis[basis.index(leave)] = (i0, j0)
        degenerate_run = degenerate_run + 1 if theta == 0.0 else 0
        pivots += 1

    np.maximum(flow, 0.0, out=flow)
    return SimplexResult(flow, u, v, basis, pivots)
