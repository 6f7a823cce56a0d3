"""Max-affine convex functions u(x) = max_i (x.y_i - v_i).

The pair (y_i, v_i) stores the conjugate: for active pieces u*(y_i) = v_i.
Cells, cell masses of exp(-u), barycenters and the Hessian weights used by
the solver are computed in closed form in 1D and by polygon clipping plus
Gauss quadrature in 2D. d >= 3 falls back to (non-certified) Monte Carlo.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.special import gammaln, logsumexp

from . import _planar

AFFINE_LIMIT = 1e-12
TAIL_REL = 1e-15


class RecessionError(ValueError):
    """exp(-u) is not integrable: 0 is not interior to the active sites."""


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MaxAffineConvex:
    sites: np.ndarray
    offsets: np.ndarray
    active: Optional[np.ndarray] = None

    def __post_init__(self):
        sites = np.array(self.sites, dtype=float)
        if sites.ndim == 1:
            sites = sites[:, None]
        offsets = np.array(self.offsets, dtype=float).reshape(-1)
        if len(sites) != len(offsets) or len(sites) == 0:
            raise ValueError("need one offset per site")
        if not (np.all(np.isfinite(sites)) and np.all(np.isfinite(offsets))):
            raise ValueError("sites and offsets must be finite")
        if len(np.unique(sites, axis=0)) != len(sites):
            raise ValueError("sites must be pairwise distinct")
        active = (np.ones(len(sites), bool) if self.active is None
                  else np.array(self.active, dtype=bool).reshape(-1))
        if len(active) != len(sites) or not active.any():
            raise ValueError("active mask must match sites and be nonempty")
        object.__setattr__(self, "sites", _frozen(sites))
        object.__setattr__(self, "offsets", _frozen(offsets))
        object.__setattr__(self, "active", _frozen(active, bool))

    @property
    def dim(self) -> int:
        return self.sites.shape[1]

    def __len__(self):
        return len(self.offsets)

    def __call__(self, x) -> np.ndarray:
        return evaluate(self, x)[0]

    def with_offsets(self, offsets) -> "MaxAffineConvex":
        return MaxAffineConvex(self.sites, offsets)

    def shifted(self, c: float) -> "MaxAffineConvex":
        """Offsets + c, i.e. u - c (mask unchanged)."""
        return MaxAffineConvex(self.sites, self.offsets + c, self.active)

    def translated(self, w) -> "MaxAffineConvex":
        """x -> u(x - w): offsets v_i + y_i.w (mask unchanged)."""
        w = np.asarray(w, float)
        return MaxAffineConvex(self.sites, self.offsets + self.sites @ w,
                               self.active)

    def to_dict(self) -> dict:
        return {"sites": self.sites.tolist(), "offsets": self.offsets.tolist(),
                "active": self.active.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "MaxAffineConvex":
        return cls(data["sites"], data["offsets"], data.get("active"))

    @cached_property
    def _pruned(self) -> "MaxAffineConvex":
        return _prune(self)

    @cached_property
    def _integrals(self) -> "CellIntegrals":
        return _cell_integrals(self)


def evaluate(u: MaxAffineConvex, x):
    """Value and maximizing piece index at x (ties to the lowest index).

    ``x`` may be a single point or an array of points of shape (n, d);
    1D inputs may be given as a flat array.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 0 or (x.ndim == 1 and u.dim > 1) or (
        x.ndim == 1 and u.dim == 1 and x.shape[0] == 1 and False)
    if x.ndim == 0:
        pts = x.reshape(1, 1)
    elif x.ndim == 1:
        pts = x.reshape(1, -1) if u.dim > 1 else x.reshape(-1, 1)
    else:
        pts = x
    vals = pts @ u.sites.T - u.offsets[None, :]
    vals = np.where(u.active[None, :], vals, -np.inf)
    idx = np.argmax(vals, axis=1)
    best = vals[np.arange(len(pts)), idx]
    if single:
        return float(best[0]), int(idx[0])
    return best, idx


# ---------------------------------------------------------------------------
# envelope pruning

def _prune_line(s, v):
    order = np.lexsort((v, s))
    stack = []
    for k in order:
        if stack and s[stack[-1]] == s[k]:
            continue  # same slope, larger offset: never on top
        while len(stack) >= 2:
            a, b = stack[-2], stack[-1]
            # b is useless iff x_ab >= x_bk
            if (v[b] - v[a]) * (s[k] - s[b]) >= (v[k] - v[b]) * (s[b] - s[a]):
                stack.pop()
            else:
                break
        stack.append(k)
    mask = np.zeros(len(s), bool)
    mask[stack] = True
    return mask


def _prune(u: MaxAffineConvex) -> MaxAffineConvex:
    if u.dim == 1:
        mask = _prune_line(u.sites[:, 0], u.offsets)
    elif u.dim == 2:
        mask = _planar.active_pieces(u.sites, u.offsets)[0]
    else:
        mask = np.ones(len(u), bool)
    return MaxAffineConvex(u.sites, u.offsets, mask)


def prune(u: MaxAffineConvex) -> MaxAffineConvex:
    """Recompute the active mask: a piece is active iff it attains the
    maximum on a set of positive volume. d >= 3 keeps every piece."""
    return u._pruned


def is_pruned(u: MaxAffineConvex) -> bool:
    return bool(np.array_equal(u.active, u._pruned.active))


# ---------------------------------------------------------------------------
# cells

@dataclass(frozen=True)
class CellDecomposition:
    """Cells of the active pieces.

    1D: ``intervals[i] = (lo, hi)`` (NaN for inactive pieces).
    2D: ``polygons[i]`` are vertex arrays clipped to ``[-box, box]^2``,
    ``halfplanes[i]`` lists (a, c) with cell = {x : a.x >= c}, and
    ``unbounded[i]`` is True when the true cell is unbounded.
    """

    dim: int
    intervals: Optional[np.ndarray] = None
    polygons: Optional[dict] = None
    halfplanes: Optional[dict] = None
    unbounded: Optional[dict] = None
    box: Optional[float] = None
    areas: dict = field(default_factory=dict)


def cells(u: MaxAffineConvex) -> CellDecomposition:
    if not is_pruned(u):
        raise ValueError("cells() needs a pruned function: call prune(u)")
    if u.dim == 1:
        idx, s, v, b = _line_geometry(u)
        iv = np.full((len(u), 2), np.nan)
        iv[idx, 0] = np.concatenate([[-np.inf], b])
        iv[idx, 1] = np.concatenate([b, [np.inf]])
        return CellDecomposition(1, intervals=iv)
    if u.dim == 2:
        _, polys, labs, R = _planar.active_pieces(u.sites, u.offsets)
        act = [i for i in range(len(u)) if u.active[i]]
        halfplanes = {i: [(u.sites[i] - u.sites[j], u.offsets[i] - u.offsets[j])
                          for j in act if j != i] for i in act}
        unb = {i: _planar.BOX in labs[i] for i in act}
        return CellDecomposition(
            2, polygons={i: np.array(polys[i]) for i in act},
            halfplanes=halfplanes, unbounded=unb, box=R,
            areas={i: _planar.area(polys[i]) for i in act})
    raise ValueError("cells() supports d = 1 and d = 2")


def _line_geometry(u):
    """Active pieces sorted by slope and their breakpoints."""
    idx = np.flatnonzero(u.active)
    s = u.sites[idx, 0]
    order = np.argsort(s)
    idx, s = idx[order], s[order]
    v = u.offsets[idx]
    b = (v[1:] - v[:-1]) / (s[1:] - s[:-1])
    return idx, s, v, b


# ---------------------------------------------------------------------------
# recession

@dataclass(frozen=True)
class RecessionReport:
    ok: bool
    margin: float

    def __bool__(self):
        return self.ok


def recession_check(u: MaxAffineConvex) -> RecessionReport:
    """Is 0 interior to the hull of the active sites? ``margin`` is the
    distance from 0 to the hull boundary (0 when not interior)."""
    y = u.sites[u.active]
    if u.dim == 1:
        lo, hi = float(y.min()), float(y.max())
        if lo < 0 < hi:
            return RecessionReport(True, min(-lo, hi))
        return RecessionReport(False, 0.0)
    m = _planar.hull_margin(y)
    return RecessionReport(m > 1e-12, max(m, 0.0))


# ---------------------------------------------------------------------------
# 1D closed forms

def log_interval_integral(t, a, b):
    """log of int_a^b exp(t x) dx; a may be -inf (t > 0), b may be +inf (t < 0)."""
    t, a, b = np.broadcast_arrays(*(np.asarray(z, float) for z in (t, a, b)))
    out = np.empty(t.shape)
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        flat = np.abs(t) <= AFFINE_LIMIT
        out[flat] = np.log(b[flat] - a[flat])
        pos = t > AFFINE_LIMIT
        tp = t[pos]
        out[pos] = (tp * b[pos] + np.log(-np.expm1(-tp * (b[pos] - a[pos])))
                    - np.log(tp))
        neg = t < -AFFINE_LIMIT
        tn = t[neg]
        out[neg] = (tn * a[neg] + np.log(-np.expm1(tn * (b[neg] - a[neg])))
                    - np.log(-tn))
    return out


def interval_mean(t, a, b):
    """Mean of x under the density proportional to exp(t x) on [a, b]."""
    t, a, b = np.broadcast_arrays(*(np.asarray(z, float) for z in (t, a, b)))
    out = np.empty(t.shape)
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        flat = np.abs(t) <= AFFINE_LIMIT
        out[flat] = 0.5 * (a[flat] + b[flat])
        left = ~flat & np.isinf(a)
        out[left] = b[left] - 1.0 / t[left]
        right = ~flat & np.isinf(b)
        out[right] = a[right] - 1.0 / t[right]
        mid = ~flat & ~left & ~right
        L = b[mid] - a[mid]
        z = t[mid] * L
        g = np.where(np.abs(z) < 1e-6, 0.5 + z / 12.0,
                     1.0 / (-np.expm1(-z)) - 1.0 / z)
        out[mid] = a[mid] + L * g
    return out


# ---------------------------------------------------------------------------
# integrals of exp(-u)

@dataclass(frozen=True)
class CellIntegrals:
    log_mass: np.ndarray        # per piece, -inf when inactive
    mean: np.ndarray            # per piece barycenter of exp(-u) on its cell
    log_z: float
    rel_err: float
    certified: bool
    edges: dict                 # (i, j) -> log Hessian weight
    vertices: Optional[np.ndarray] = None   # cell-complex vertices (2D)

    @property
    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_mass - self.log_z)


def _line_integrals(u: MaxAffineConvex) -> CellIntegrals:
    idx, s, v, b = _line_geometry(u)
    lo = np.concatenate([[-np.inf], b])
    hi = np.concatenate([b, [np.inf]])
    t = -s
    logm = v + log_interval_integral(t, lo, hi)
    mean = interval_mean(t, lo, hi)
    k = len(u)
    log_mass = np.full(k, -np.inf)
    log_mass[idx] = logm
    means = np.zeros((k, 1))
    means[idx, 0] = mean
    edges = {}
    for a in range(len(idx) - 1):
        ub = s[a] * b[a] - v[a]
        i, j = sorted((int(idx[a]), int(idx[a + 1])))
        edges[(i, j)] = -ub - math.log(s[a + 1] - s[a])
    return CellIntegrals(_frozen(log_mass), _frozen(means),
                         float(logsumexp(logm)), 1e-15, True, edges,
                         _frozen(b))


def _plane_integrals(u: MaxAffineConvex) -> CellIntegrals:
    rec = recession_check(u)
    act = [int(i) for i in np.flatnonzero(u.active)]
    y, v = u.sites, u.offsets
    _, polys_big, _, r_big = _planar.active_pieces(y, v)
    verts = np.array([p for i in act for p in polys_big[i]])
    u_min = float(np.min(evaluate(u, verts)[0]))
    ymax = float(np.max(np.linalg.norm(y[act], axis=1)))
    # certified lower bound Z >= exp(-u_min) * 2 pi / ymax^2 (u is ymax-Lipschitz)
    log_zlow_rel = math.log(2.0 * math.pi) - 2.0 * math.log(ymax)
    alpha = rec.margin
    beta = float(np.max(v[act]))
    # tail of exp(-(alpha|x| - beta)) outside radius R, relative to the bound
    R = 1.0
    for _ in range(60):
        R = (beta + u_min + math.log(2 * math.pi * (R / alpha + alpha ** -2))
             - math.log(TAIL_REL) - log_zlow_rel) / alpha
        R = max(R, 1.0)
    tail_rel = (2 * math.pi * math.exp(-alpha * R + beta + u_min)
                * (R / alpha + alpha ** -2)) / math.exp(log_zlow_rel)
    R_big = max(R, r_big)
    polys, labs = _planar.clip_cells(y, v, act, R_big)
    if R_big > R:
        bx, _ = _planar.box(R)
        for i in act:
            p, lab = polys[i], labs[i]
            for a, c in ((np.array([1.0, 0.0]), -R), (np.array([-1.0, 0.0]), -R),
                         (np.array([0.0, 1.0]), -R), (np.array([0.0, -1.0]), -R)):
                p, lab = _planar.clip(p, lab, a, c, _planar.BOX)
            polys[i], labs[i] = p, lab
    polys = {i: p for i, p in polys.items() if p}
    labs = {i: labs[i] for i in polys}
    shift = u_min
    masses, moments, err = _planar.integrate_cells(
        y, v, polys, shift, math.exp(log_zlow_rel))
    k = len(u)
    log_mass = np.full(k, -np.inf)
    means = np.zeros((k, 2))
    for i, m in masses.items():
        if m > 0:
            log_mass[i] = math.log(m) - shift
            means[i] = moments[i] / m
    z_rel = sum(masses.values())
    rel_err = err / z_rel + tail_rel * math.exp(log_zlow_rel) / z_rel
    log_z = math.log(z_rel) - shift
    edges = {key: w - shift for key, w in
             _planar.edge_weights(y, v, polys, labs, shift).items()}
    return CellIntegrals(_frozen(log_mass), _frozen(means), log_z, rel_err,
                         True, edges, _frozen(verts))


def _monte_carlo_integrals(u: MaxAffineConvex, n: int = 200_000,
                           seed: int = 0) -> CellIntegrals:
    """Importance-sampled integrals for d >= 3 (not certified)."""
    from scipy.optimize import linprog

    d = u.dim
    rec = recession_check(u)
    act = np.flatnonzero(u.active)
    # point minimizing u: min t s.t. x.y_i - v_i <= t
    A = np.hstack([u.sites[act], -np.ones((len(act), 1))])
    res = linprog(np.r_[np.zeros(d), 1.0], A_ub=A, b_ub=u.offsets[act],
                  bounds=[(None, None)] * (d + 1), method="highs")
    c = res.x[:d]
    u_min = float(res.x[d])
    rate = 0.5 * rec.margin
    rng = np.random.default_rng(seed)
    r = rng.gamma(d, 1.0 / rate, size=n)
    dirs = rng.normal(size=(n, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    x = c + r[:, None] * dirs
    log_sphere = math.log(2.0) + 0.5 * d * math.log(math.pi) - gammaln(0.5 * d)
    log_q = d * math.log(rate) - rate * r - gammaln(d) - log_sphere
    vals, idx = evaluate(u, x)
    w = np.exp(-(vals - u_min) - log_q)
    z_rel = float(w.mean())
    se = float(w.std(ddof=1) / math.sqrt(n))
    k = len(u)
    log_mass = np.full(k, -np.inf)
    means = np.zeros((k, d))
    for i in act:
        sel = idx == i
        mi = float(w[sel].sum()) / n
        if mi > 0:
            log_mass[i] = math.log(mi) - u_min
            means[i] = (w[sel] @ x[sel]) / (n * mi)
    return CellIntegrals(_frozen(log_mass), _frozen(means),
                         math.log(z_rel) - u_min, se / z_rel, False, {})


def _cell_integrals(u: MaxAffineConvex) -> CellIntegrals:
    p = u._pruned
    if not recession_check(p):
        raise RecessionError(
            "exp(-u) is not integrable: 0 is not interior to the active sites")
    if u.dim == 1:
        return _line_integrals(p)
    if u.dim == 2:
        return _plane_integrals(p)
    return _monte_carlo_integrals(p)


def cell_integrals(u: MaxAffineConvex) -> CellIntegrals:
    """All cell data of exp(-u) (pruning u first); cached per instance."""
    return u._integrals


def integrate_exp_neg(u: MaxAffineConvex) -> tuple[float, float]:
    """(Z, relative error bound) with Z = integral of exp(-u)."""
    ci = cell_integrals(u)
    return math.exp(ci.log_z), ci.rel_err


def cell_masses(u: MaxAffineConvex) -> np.ndarray:
    """Mass of exp(-u) on each piece's cell (0 for inactive pieces)."""
    return np.exp(cell_integrals(u).log_mass)


def barycenter_exp_neg(u: MaxAffineConvex) -> np.ndarray:
    ci = cell_integrals(u)
    return ci.probabilities @ ci.mean


def conjugate_value(u: MaxAffineConvex, y) -> float:
    """u*(y) for y inside the hull of the active sites (attained at a
    vertex of the cell complex)."""
    y = np.asarray(y, float).reshape(-1)
    p = u._pruned
    if u.dim == 1:
        idx, s, v, b = _line_geometry(p)
        if len(b) == 0:
            return float(v[0]) if np.isclose(s[0], y[0]) else np.inf
        pts = b[:, None]
    elif u.dim == 2:
        _, polys, _, _ = _planar.active_pieces(p.sites, p.offsets)
        pts = np.array([q for poly in polys.values() for q in poly])
    else:
        raise ValueError("conjugate_value supports d = 1 and d = 2")
    vals = pts @ y - evaluate(p, pts)[0]
    return float(np.max(vals))


# ---------------------------------------------------------------------------
# discrete Legendre transform

def _lower_hull(x, f):
    hull = []
    for k in range(len(x)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            if (f[b] - f[a]) * (x[k] - x[b]) >= (f[k] - f[b]) * (x[b] - x[a]):
                hull.pop()
            else:
                break
        hull.append(k)
    return np.array(hull)


def _conjugate_line(x, f, s, domain):
    order = np.argsort(x)
    x, f = x[order], f[order]
    finite = np.isfinite(f)
    x, f = x[finite], f[finite]
    h = _lower_hull(x, f)
    hx, hf = x[h], f[h]
    slopes = np.diff(hf) / np.diff(hx)
    # piece k of the hull is optimal for s in [slopes[k-1], slopes[k]]
    k = np.searchsorted(slopes, s, side="left")
    out = s * hx[k] - hf[k]
    if domain == "R" and len(slopes):
        out = np.where((s < slopes[0] - 1e-12) | (s > slopes[-1] + 1e-12),
                       np.inf, out)
    return out


def conjugate_grid(x, f, s, domain: str = "R"):
    """Discrete Legendre-Fenchel transform f*(s) = max_k s.x_k - f(x_k).

    Linear-time in the sorted 1D case (lower hull + monotone slope merge).
    ``domain="R"`` reads the samples as a function on the whole line and
    returns +inf for slopes outside the range of the hull's edge slopes;
    ``domain="grid"`` takes the supremum over the sample points only.

    For a 2D tensor grid pass ``x = (x0, x1)``, ``f`` of shape
    ``(len(x0), len(x1))`` and ``s = (s0, s1)``; the transform factorizes
    into two passes of 1D transforms (grid semantics).
    """
    if domain not in ("R", "grid"):
        raise ValueError("domain must be 'R' or 'grid'")
    if isinstance(x, tuple):
        x0, x1 = (np.asarray(a, float) for a in x)
        s0, s1 = (np.asarray(a, float) for a in s)
        if len(s0) == 0 or len(s1) == 0:
            raise ValueError("empty dual grid")
        f = np.asarray(f, float)
        # g(x0, s1) = max_x1 s1 x1 - f(x0, x1)
        g = np.stack([_conjugate_line(x1, row, s1, "grid") for row in f])
        # f*(s0, s1) = max_x0 s0 x0 - (-g(x0, s1))
        return np.stack([_conjugate_line(x0, -g[:, k], s0, "grid")
                         for k in range(len(s1))], axis=1)
    x = np.asarray(x, float)
    s = np.atleast_1d(np.asarray(s, float))
    if len(s) == 0:
        raise ValueError("empty dual grid")
    return _conjugate_line(x, np.asarray(f, float), s, domain)
