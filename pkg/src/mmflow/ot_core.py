"""Maximal-correlation transport between discrete measures and 1D
densities: exact plans and Kantorovich potentials, W2, cyclical
monotonicity, the halfspace witness coupling and displacement geodesics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

import numpy as np

from ._simplex import TransportSizeError, northwest_corner, transport_simplex
from .convex import MaxAffineConvex
from .entropy import entropy
from .measures import (DiscreteMeasure, GridDensity, MeasureError,
                       PiecewiseDensity, barycenter, line_partition)

__all__ = [
    "TransportPlan", "DualPair", "CorrelationResult", "GridCorrelation",
    "GeodesicPath", "TransportSizeError", "max_correlation", "w2_distance",
    "max_correlation_grid", "check_cyclical_monotonicity",
    "witness_halfspace_plan", "geodesic", "entropy_geodesic_derivative",
    "correlation_slope",
]

MASS_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Sparse coupling: ``entries`` rows are (i, j, mass) with mass > 0."""

    n_source: int
    n_target: int
    entries: np.ndarray

    def __post_init__(self):
        e = np.array(self.entries, dtype=float).reshape(-1, 3)
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @classmethod
    def from_dense(cls, flow: np.ndarray) -> "TransportPlan":
        i, j = np.nonzero(flow > 0)
        return cls(flow.shape[0], flow.shape[1],
                   np.column_stack([i, j, flow[i, j]]))

    @property
    def rows(self) -> np.ndarray:
        return self.entries[:, 0].astype(int)

    @property
    def cols(self) -> np.ndarray:
        return self.entries[:, 1].astype(int)

    @property
    def mass(self) -> np.ndarray:
        return self.entries[:, 2]

    def dense(self) -> np.ndarray:
        out = np.zeros((self.n_source, self.n_target))
        np.add.at(out, (self.rows, self.cols), self.mass)
        return out

    def marginals(self) -> tuple[np.ndarray, np.ndarray]:
        a = np.bincount(self.rows, self.mass, minlength=self.n_source)
        b = np.bincount(self.cols, self.mass, minlength=self.n_target)
        return a, b

    def to_dict(self) -> dict:
        return {"n_source": self.n_source, "n_target": self.n_target,
                "entries": [[int(i), int(j), float(m)] for i, j, m in
                            zip(self.rows, self.cols, self.mass)]}


@dataclass(frozen=True, eq=False)
class DualPair:
    """Potentials with u_i + u*_j >= x_i.y_j, tight on the plan."""

    u: np.ndarray
    u_star: np.ndarray


class CorrelationResult(NamedTuple):
    value: float
    plan: TransportPlan
    duals: DualPair


class GridCorrelation(NamedTuple):
    value: float
    potential: MaxAffineConvex
    breakpoints: np.ndarray


def _check_pair(rho, mu):
    if rho.dim != mu.dim:
        raise MeasureError(
            f"dimension mismatch: {rho.dim} vs {mu.dim}")


# ---------------------------------------------------------------------------
# discrete transport

def _solve_lp(rho: DiscreteMeasure, mu: DiscreteMeasure, cost: np.ndarray):
    """Minimize <cost, plan>, starting from a NW-corner basis built on a
    good ordering (sorted projections on the leading principal axis)."""
    n, m = len(rho), len(mu)
    if n * m > 2000 * 2000:
        raise TransportSizeError(
            f"instance too large: {n} x {m} exceeds 2000 x 2000")
    if rho.dim == 1:
        pr, pc = rho.atoms[:, 0], mu.atoms[:, 0]
    else:
        pts = np.vstack([rho.atoms, mu.atoms])
        pts = pts - pts.mean(0)
        axis = np.linalg.svd(pts, full_matrices=False)[2][0]
        pr, pc = rho.atoms @ axis, mu.atoms @ axis
    ro = np.argsort(pr, kind="stable")
    co = np.argsort(pc, kind="stable")
    a, b = rho.weights[ro], mu.weights[co]
    C = cost[np.ix_(ro, co)]
    flow, basis = northwest_corner(a, b)
    res = transport_simplex(a, b, C, flow, basis)
    flow = np.empty_like(res.flow)
    flow[np.ix_(ro, co)] = res.flow
    pu = np.empty(n)
    pv = np.empty(m)
    pu[ro] = res.u
    pv[co] = res.v
    return flow, pu, pv


def max_correlation(rho: DiscreteMeasure, mu: DiscreteMeasure
                    ) -> CorrelationResult:
    """sup of sum x.y over couplings of two discrete measures.

    In 1D the comonotone (NW-corner on sorted supports) plan is optimal and
    the simplex only certifies it; in higher dimension the transportation
    LP is solved exactly by the spanning-tree simplex.
    """
    _check_pair(rho, mu)
    x, y = rho.atoms, mu.atoms
    gram = x @ y.T
    flow, pu, pv = _solve_lp(rho, mu, -gram)
    plan = TransportPlan.from_dense(flow)
    # minimization potentials pu + pv <= -x.y  ->  phi = -pu, psi = -pv
    psi = -pv
    psi = psi - np.min(psi - 0.5 * np.sum(y ** 2, axis=1))
    phi = np.max(gram - psi[None, :], axis=1)
    value = float(np.sum(plan.mass * gram[plan.rows, plan.cols]))
    return CorrelationResult(value, plan, DualPair(phi, psi))


def dual_value(rho: DiscreteMeasure, mu: DiscreteMeasure,
               duals: DualPair) -> float:
    return float(rho.weights @ duals.u + mu.weights @ duals.u_star)


def w2_distance(rho, mu) -> float:
    """Quadratic Wasserstein distance.

    Two discrete measures: exact LP with cost |x - y|^2. Two 1D densities
    (grid or piecewise): exact integral of the squared quantile difference.
    """
    _check_pair(rho, mu)
    if isinstance(rho, DiscreteMeasure) and isinstance(mu, DiscreteMeasure):
        cost = np.sum((rho.atoms[:, None, :] - mu.atoms[None, :, :]) ** 2,
                      axis=2)
        flow, _, _ = _solve_lp(rho, mu, cost)
        return float(np.sqrt(max(np.sum(flow * cost), 0.0)))
    if rho.dim != 1:
        raise MeasureError("density-to-density W2 is only available in 1D")
    s, (a0, b0), (a1, b1) = _common_quantiles(rho, mu)
    ds = np.diff(s)
    da, db = a1 - a0, b1 - b0
    # integral of a linear function squared over each s-interval
    return float(np.sqrt(np.sum(ds * (da * da + da * db + db * db) / 3.0)))


def check_cyclical_monotonicity(plan: TransportPlan, supports,
                                tol: float = 1e-9) -> bool:
    """All 2-cycles of plan entries satisfy
    x.y + x'.y' >= x.y' + x'.y - tol (maximal-correlation orientation)."""
    x, y = (np.asarray(s, float) for s in supports)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    X, Y = x[plan.rows], y[plan.cols]
    G = X @ Y.T
    d = np.diag(G)
    slack = d[:, None] + d[None, :] - G - G.T
    return bool(np.all(slack >= -tol))


# ---------------------------------------------------------------------------
# 1D quantile machinery

def _cdf_levels(rho):
    e, m = line_partition(rho)
    F = np.concatenate([[0.0], np.cumsum(m)])
    F /= F[-1]
    return e, m, F


def _quantile_limits(e, m, F, s):
    """Q(s+) at s[:-1] and Q(s-) at s[1:] for a grid of quantile levels that
    contains all of F (Q is linear between consecutive levels)."""
    mid = 0.5 * (s[:-1] + s[1:])
    k = np.clip(np.searchsorted(F, mid, side="right") - 1, 0, len(m) - 1)
    width = e[k + 1] - e[k]
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = np.where(m[k] > 0, width / m[k], 0.0)
    left = e[k] + (s[:-1] - F[k]) * slope
    right = e[k] + (s[1:] - F[k]) * slope
    return np.clip(left, e[k], e[k + 1]), np.clip(right, e[k], e[k + 1])


def _merge_levels(*levels, gap=1e-14):
    s = np.unique(np.concatenate(levels))
    s = s[(s >= 0.0) & (s <= 1.0)]
    keep = np.concatenate([[True], np.diff(s) > gap])
    s = s[keep]
    s[0], s[-1] = 0.0, 1.0
    return s


def _common_quantiles(rho0, rho1):
    e0, m0, F0 = _cdf_levels(rho0)
    e1, m1, F1 = _cdf_levels(rho1)
    s = _merge_levels(F0, F1)
    return s, _quantile_limits(e0, m0, F0, s), _quantile_limits(e1, m1, F1, s)


def max_correlation_grid(rho, mu: DiscreteMeasure) -> GridCorrelation:
    """T(rho, mu) for a 1D density and a 1D discrete measure by quantile
    matching, with the Kantorovich potential of rho as a max-affine function.

    The potential integrates the monotone map (value y_j on the j-th quantile
    block) and vanishes at the left end of rho's support; its offsets are
    the conjugate values u*(y_j).
    """
    if mu.dim != 1 or getattr(rho, "dim", 1) != 1:
        raise MeasureError("max_correlation_grid needs 1D inputs")
    e, m, F = _cdf_levels(rho)
    order = np.argsort(mu.atoms[:, 0], kind="stable")
    y = mu.atoms[order, 0]
    W = np.concatenate([[0.0], np.cumsum(mu.weights[order])])
    W /= W[-1]
    s = _merge_levels(F, W)
    ql, qr = _quantile_limits(e, m, F, s)
    mid = 0.5 * (s[:-1] + s[1:])
    blk = np.clip(np.searchsorted(W, mid, side="right") - 1, 0, len(y) - 1)
    value = float(np.sum(np.diff(s) * 0.5 * (ql + qr) * y[blk]))
    # breakpoint between block j and j+1: midpoint of the quantile jump
    # at level W[j+1] (a single point when rho has no gap there)
    inner = W[1:-1]
    # W-levels may have been merged into a CDF level within roundoff
    pos = np.clip(np.searchsorted(s, inner), 1, len(s) - 1)
    pos = np.where(np.abs(s[pos - 1] - inner) < np.abs(s[pos] - inner),
                   pos - 1, pos)
    pos = np.clip(pos, 1, len(s) - 2) if len(s) > 2 else pos
    left_lim = qr[pos - 1]
    right_lim = ql[np.minimum(pos, len(ql) - 1)]
    q = 0.5 * (left_lim + right_lim)
    x0 = float(e[0])
    v = np.empty(len(y))
    v[0] = y[0] * x0
    if len(y) > 1:
        v[1:] = v[0] + np.cumsum(np.diff(y) * q)
    offsets = np.empty(len(y))
    offsets[order] = v
    return GridCorrelation(value, MaxAffineConvex(mu.atoms, offsets), q)


def correlation_slope(rho0, rho1, mu: DiscreteMeasure) -> float:
    """Integral of (T(x) - x).y against the optimal plan between rho0 and
    mu, where T is the monotone map from rho0 to rho1 (1D)."""
    e0, m0, F0 = _cdf_levels(rho0)
    e1, m1, F1 = _cdf_levels(rho1)
    order = np.argsort(mu.atoms[:, 0], kind="stable")
    y = mu.atoms[order, 0]
    W = np.concatenate([[0.0], np.cumsum(mu.weights[order])])
    W /= W[-1]
    s = _merge_levels(F0, F1, W)
    a0, b0 = _quantile_limits(e0, m0, F0, s)
    a1, b1 = _quantile_limits(e1, m1, F1, s)
    mid = 0.5 * (s[:-1] + s[1:])
    blk = np.clip(np.searchsorted(W, mid, side="right") - 1, 0, len(y) - 1)
    disp = 0.5 * ((a1 - a0) + (b1 - b0))
    return float(np.sum(np.diff(s) * disp * y[blk]))


# ---------------------------------------------------------------------------
# witness coupling

def _positive_part_sum(x, w, e):
    return float(w @ np.maximum(x @ e, 0.0))


def _best_direction(x, w, seed=0):
    d = x.shape[1]
    if d == 1:
        up = _positive_part_sum(x, w, np.array([1.0]))
        down = _positive_part_sum(x, w, np.array([-1.0]))
        return np.array([1.0 if up >= down else -1.0])
    if d == 2:
        # sum_i w_i (x_i.e)_+ = max over halfplane sets S of e.v_S; every S
        # cut out by a line through 0 is fixed on an arc between critical
        # angles, and the optimum sits at e = v_S / |v_S|
        ang = np.arctan2(x[:, 1], x[:, 0])
        crit = np.sort(np.mod(np.concatenate([ang + np.pi / 2,
                                              ang - np.pi / 2]), 2 * np.pi))
        crit = np.unique(crit)
        mids = 0.5 * (crit + np.roll(crit, -1))
        mids[-1] = 0.5 * (crit[-1] + crit[0] + 2 * np.pi)
        cands = [np.array([np.cos(t), np.sin(t)]) for t in mids]
        for t in mids:
            e = np.array([np.cos(t), np.sin(t)])
            pos = x @ e > 0
            vs = w[pos] @ x[pos]
            nv = np.linalg.norm(vs)
            if nv > 0:
                cands.append(vs / nv)
        vals = [_positive_part_sum(x, w, e) for e in cands]
        return cands[int(np.argmax(vals))]
    # d >= 3: seeded ascent e <- v_{S(e)} / |v_{S(e)}|
    rng = np.random.default_rng(seed)
    best, best_val = None, -np.inf
    for _ in range(64):
        e = rng.normal(size=d)
        e /= np.linalg.norm(e)
        for _ in range(100):
            pos = x @ e > 0
            vs = w[pos] @ x[pos]
            nv = np.linalg.norm(vs)
            if nv == 0 or np.allclose(vs / nv, e):
                break
            e = vs / nv
        val = _positive_part_sum(x, w, e)
        if val > best_val:
            best, best_val = e, val
    return best


def witness_halfspace_plan(rho: DiscreteMeasure, mu: DiscreteMeasure,
                           seed: int = 0) -> tuple[TransportPlan, float]:
    """Feasible coupling pairing the half of rho on {x.e > 0} with the top
    part of mu along e (same mass), each pair tensorized.

    e maximizes sum rho_i (x_i.e)_+ (exact in d = 1, 2). Atoms of rho on
    the hyperplane x.e = 0 go to the lower half; they carry no correlation.
    Returns the plan and its correlation value, a lower bound for T.
    """
    _check_pair(rho, mu)
    if np.linalg.norm(barycenter(rho)) > 1e-9:
        raise MeasureError("witness plan needs a centered source")
    x, w = rho.atoms, rho.weights
    e = _best_direction(x, w, seed)
    upper = x @ e > 0
    ell = float(w[upper].sum())
    if ell <= 0.0 or ell >= 1.0:
        raise MeasureError("degenerate split: no source mass off the hyperplane")
    # split mu: top mass ell along e (lowest index first on ties)
    proj = mu.atoms @ e
    order = np.lexsort((np.arange(len(mu)), -proj))
    cum = np.cumsum(mu.weights[order])
    prev = np.concatenate([[0.0], cum[:-1]])
    top = np.zeros(len(mu))
    top[order] = np.clip(np.minimum(cum, ell) - prev, 0.0, None)
    bottom = mu.weights - top
    bottom[bottom < 1e-15] = 0.0
    top[top < 1e-15] = 0.0
    flow = np.zeros((len(rho), len(mu)))
    flow[upper] = np.outer(w[upper], top) / top.sum()
    flow[~upper] = np.outer(w[~upper], bottom) / bottom.sum()
    plan = TransportPlan.from_dense(flow)
    value = float(np.sum(plan.mass * np.einsum(
        "kd,kd->k", x[plan.rows], mu.atoms[plan.cols])))
    return plan, value


# ---------------------------------------------------------------------------
# geodesics

class GeodesicPath:
    """Constant-speed W2 geodesic from rho0 to rho1.

    Discrete endpoints follow the optimal plan. 1D densities follow the
    monotone rearrangement: ``exact(t)`` is the piecewise-constant
    interpolant on its natural (irregular) partition and ``path(t)``
    re-grids it at the spacing of rho0.
    """

    def __init__(self, rho0, rho1):
        _check_pair(rho0, rho1)
        self.rho0, self.rho1 = rho0, rho1
        self.discrete = isinstance(rho0, DiscreteMeasure)
        if self.discrete != isinstance(rho1, DiscreteMeasure):
            raise MeasureError("geodesic needs two discrete measures or two "
                               "1D densities")
        if self.discrete:
            self.plan = max_correlation(rho0, rho1).plan
        else:
            if rho0.dim != 1:
                raise MeasureError("density geodesics are 1D only")
            self.levels, self.q0, self.q1 = _common_quantiles(rho0, rho1)

    def map_values(self, x):
        """Monotone map T(x) from rho0 to rho1 (1D densities)."""
        e, m, F = _cdf_levels(self.rho0)
        x = np.asarray(x, float)
        k = np.clip(np.searchsorted(e, x, side="right") - 1, 0, len(m) - 1)
        s = F[k] + np.clip(x - e[k], 0, None) / (e[k + 1] - e[k]) * m[k]
        s = np.clip(s, 0.0, 1.0)
        e1, m1, F1 = _cdf_levels(self.rho1)
        j = np.clip(np.searchsorted(F1, s, side="right") - 1, 0, len(m1) - 1)
        while True:
            zero = (m1[j] == 0) & (j < len(m1) - 1)
            if not zero.any():
                break
            j = np.where(zero, j + 1, j)
        return e1[j] + (s - F1[j]) / np.where(m1[j] > 0, m1[j], 1) * (
            e1[j + 1] - e1[j])

    def exact(self, t: float) -> PiecewiseDensity:
        if self.discrete:
            raise TypeError("exact() is for density geodesics")
        (a0, b0), (a1, b1) = self.q0, self.q1
        lo = (1 - t) * a0 + t * a1
        hi = (1 - t) * b0 + t * b1
        ds = np.diff(self.levels)
        scale = max(1.0, float(np.max(np.abs(hi))), float(np.max(np.abs(lo))))
        edges, vals = [float(lo[0])], []
        for k in range(len(ds)):
            a, b = float(lo[k]), float(hi[k])
            if a > edges[-1] + 1e-13 * scale:
                edges.append(a)
                vals.append(0.0)          # gap between disjoint pieces
            a = edges[-1]
            if b - a <= 1e-13 * scale:
                # vanishing interval: fold its mass into the previous cell
                if vals:
                    vals[-1] += ds[k] / (edges[-1] - edges[-2])
                continue
            edges.append(b)
            vals.append(ds[k] / (b - a))
        return PiecewiseDensity(edges, vals)

    def __call__(self, t: float):
        if t == 0:
            return self.rho0
        if t == 1:
            return self.rho1
        if self.discrete:
            p = self.plan
            pts = ((1 - t) * self.rho0.atoms[p.rows]
                   + t * self.rho1.atoms[p.cols])
            return DiscreteMeasure(pts, p.mass)
        return regrid(self.exact(t), self.rho0)


def regrid(rho: PiecewiseDensity, like: GridDensity) -> GridDensity:
    """Exact cell averages of a 1D piecewise density on cells aligned with
    ``like``'s grid (same spacing and phase)."""
    h = float(like.spacing[0])
    o = float(like.origin[0])
    k0 = int(np.floor((rho.edges[0] - o) / h))
    k1 = int(np.ceil((rho.edges[-1] - o) / h))
    grid = o + h * np.arange(k0, k1 + 1)
    F = np.concatenate([[0.0], np.cumsum(rho.cell_masses())])
    G = np.interp(grid, rho.edges, F)
    mass = np.diff(G)
    return GridDensity([grid[0]], [h], mass / (mass.sum() * h))


def geodesic(rho0, rho1) -> GeodesicPath:
    return GeodesicPath(rho0, rho1)


def entropy_geodesic_derivative(rho: GridDensity, T) -> float:
    """-sum (T'(x) - 1) rho(x) h with centered differences of T sampled at
    the cell centers (one-sided at the ends)."""
    if rho.dim != 1:
        raise MeasureError("entropy_geodesic_derivative is 1D only")
    T = np.asarray(T, float).reshape(-1)
    if len(T) != rho.shape[0]:
        raise ValueError("map must have one value per grid cell")
    if np.any(np.diff(T) < 0):
        raise ValueError("map is not monotone")
    dT = np.gradient(T, float(rho.spacing[0]))
    return float(-np.sum((dT - 1.0) * rho.values) * rho.cell_volume)


def entropy_along(path: GeodesicPath, ts) -> np.ndarray:
    return np.array([entropy(path.exact(t)) for t in ts])
