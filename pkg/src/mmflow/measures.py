"""Probability measures on R^d: discrete measures, grid densities, and the
operations used to approximate and summarise them.

All containers are immutable: arrays are copied on construction and flagged
read-only, so instances can be shared freely between threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import optimize

MASS_TOL = 1e-6
DEGENERACY_EIG = 1e-12


class MeasureError(ValueError):
    """Raised on malformed or invalid measure data."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _normalized_mass(total: float, tol: float = MASS_TOL) -> float:
    if not math.isfinite(total) or abs(total - 1.0) > tol:
        raise MeasureError(f"mass {total:.12g} ≠ 1")
    return total


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Finite sum of weighted Dirac masses.

    Duplicate atoms are merged (weights summed, first occurrence keeps its
    position) and weights are renormalized when their sum is within
    ``MASS_TOL`` of one.
    """

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        weights = np.array(self.weights, dtype=float).reshape(-1)
        if atoms.ndim != 2 or atoms.shape[1] < 1:
            raise MeasureError("atoms must be a list of points")
        if len(atoms) == 0 or len(atoms) != len(weights):
            raise MeasureError(
                f"{len(atoms)} atoms but {len(weights)} weights")
        if not np.all(np.isfinite(atoms)):
            raise MeasureError("atoms must be finite")
        if np.any(~np.isfinite(weights)) or np.any(weights <= 0):
            raise MeasureError("nonpositive weight")
        _normalized_mass(float(weights.sum()))

        _, first, inverse = np.unique(atoms, axis=0, return_index=True,
                                      return_inverse=True)
        inverse = inverse.reshape(-1)
        if len(first) < len(atoms):
            order = np.argsort(first)
            rank = np.empty_like(order)
            rank[order] = np.arange(len(order))
            merged = np.zeros(len(first))
            np.add.at(merged, rank[inverse], weights)
            atoms = atoms[first[order]]
            weights = merged
        weights = weights / weights.sum()
        object.__setattr__(self, "atoms", _frozen(atoms))
        object.__setattr__(self, "weights", _frozen(weights))

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def __len__(self) -> int:
        return len(self.weights)

    def translate(self, w) -> "DiscreteMeasure":
        return DiscreteMeasure(self.atoms + np.asarray(w, dtype=float),
                               self.weights)

    def dilate(self, s: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self.atoms * s, self.weights)

    def __eq__(self, other):
        if not isinstance(other, DiscreteMeasure):
            return NotImplemented
        return (self.atoms.shape == other.atoms.shape
                and np.array_equal(self.atoms, other.atoms)
                and np.array_equal(self.weights, other.weights))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Piecewise-constant density on a uniform axis-aligned grid.

    ``values`` has one entry per cell (shape = cell counts per axis); cell
    ``k`` spans ``origin + k*spacing`` to ``origin + (k+1)*spacing``.
    """

    origin: np.ndarray
    spacing: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 0:
            raise MeasureError("grid values must have at least one axis")
        d = values.ndim
        origin = np.broadcast_to(np.asarray(self.origin, float), (d,)).copy()
        spacing = np.broadcast_to(np.asarray(self.spacing, float), (d,)).copy()
        if np.any(spacing <= 0) or not np.all(np.isfinite(spacing)):
            raise MeasureError("grid spacing must be positive")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise MeasureError("grid values must be finite and nonnegative")
        total = float(values.sum() * np.prod(spacing))
        _normalized_mass(total)
        values = values / total
        object.__setattr__(self, "origin", _frozen(origin))
        object.__setattr__(self, "spacing", _frozen(spacing))
        object.__setattr__(self, "values", _frozen(values))

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis_edges(self, axis: int = 0) -> np.ndarray:
        n = self.shape[axis]
        return self.origin[axis] + self.spacing[axis] * np.arange(n + 1)

    def axis_centers(self, axis: int = 0) -> np.ndarray:
        n = self.shape[axis]
        return self.origin[axis] + self.spacing[axis] * (np.arange(n) + 0.5)

    def centers(self) -> np.ndarray:
        """Cell centers, shape ``(ncells, dim)`` in row-major cell order."""
        axes = [self.axis_centers(k) for k in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def cell_masses(self) -> np.ndarray:
        return self.values * self.cell_volume

    def translate(self, w) -> "GridDensity":
        return GridDensity(self.origin + np.asarray(w, float), self.spacing,
                           self.values)

    def dilate(self, s: float) -> "GridDensity":
        """Push forward by ``x -> s*x`` (s > 0)."""
        if s <= 0:
            raise MeasureError("dilation factor must be positive")
        return GridDensity(self.origin * s, self.spacing * s,
                           self.values / s ** self.dim)

    @classmethod
    def from_function(cls, f, lo, hi, n) -> "GridDensity":
        """Sample ``f`` at cell centers of a 1D grid and normalize."""
        h = (hi - lo) / n
        x = lo + h * (np.arange(n) + 0.5)
        vals = np.asarray(f(x), dtype=float)
        return cls([lo], [h], vals / (vals.sum() * h))

    @classmethod
    def uniform(cls, lo, hi, n) -> "GridDensity":
        h = (hi - lo) / n
        return cls([lo], [h], np.full(n, 1.0 / (hi - lo)))


@dataclass(frozen=True, eq=False)
class PiecewiseDensity:
    """Piecewise-constant density on an irregular 1D partition.

    This is the exact representation of displacement interpolants between
    two 1D grid densities (their cells do not align with any uniform grid).
    """

    edges: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        edges = np.array(self.edges, dtype=float).reshape(-1)
        values = np.array(self.values, dtype=float).reshape(-1)
        if len(edges) != len(values) + 1 or len(values) == 0:
            raise MeasureError("need len(edges) == len(values) + 1")
        if np.any(np.diff(edges) <= 0):
            raise MeasureError("edges must be strictly increasing")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise MeasureError("values must be finite and nonnegative")
        total = float(np.sum(values * np.diff(edges)))
        _normalized_mass(total)
        object.__setattr__(self, "edges", _frozen(edges))
        object.__setattr__(self, "values", _frozen(values / total))

    dim = 1

    def cell_masses(self) -> np.ndarray:
        return self.values * np.diff(self.edges)

    def translate(self, w) -> "PiecewiseDensity":
        return PiecewiseDensity(self.edges + float(np.ravel(w)[0]),
                                self.values)


@dataclass(frozen=True)
class HyperplaneReport:
    degenerate: bool
    normal: Optional[np.ndarray] = None
    offset: Optional[float] = None


Measure = Union[DiscreteMeasure, GridDensity, PiecewiseDensity]


def line_partition(rho) -> tuple[np.ndarray, np.ndarray]:
    """(edges, cell masses) of a 1D density, grid or irregular."""
    if isinstance(rho, GridDensity):
        if rho.dim != 1:
            raise MeasureError("expected a 1D density")
        return rho.axis_edges(0), rho.cell_masses()
    if isinstance(rho, PiecewiseDensity):
        return rho.edges, rho.cell_masses()
    raise TypeError(f"not a 1D density: {type(rho).__name__}")


# ---------------------------------------------------------------------------
# serialization

def measure_to_dict(m: Measure) -> dict:
    if isinstance(m, DiscreteMeasure):
        return {"type": "discrete", "dim": m.dim,
                "atoms": m.atoms.tolist(), "weights": m.weights.tolist()}
    if isinstance(m, GridDensity):
        return {"type": "grid", "dim": m.dim, "origin": m.origin.tolist(),
                "spacing": m.spacing.tolist(), "shape": list(m.shape),
                "values": m.values.reshape(-1).tolist()}
    raise TypeError(f"cannot serialize {type(m).__name__}")


def measure_from_dict(data: dict) -> Union[DiscreteMeasure, GridDensity]:
    if not isinstance(data, dict):
        raise MeasureError("measure JSON must be an object")
    kind = data.get("type")
    if kind is None:
        kind = "grid" if "values" in data else "discrete"
    try:
        if kind == "discrete":
            atoms = data["atoms"]
            weights = data["weights"]
            if not isinstance(atoms, list) or not atoms:
                raise MeasureError("atoms must be a nonempty list")
            rows = [a if isinstance(a, list) else [a] for a in atoms]
            dims = {len(r) for r in rows}
            if len(dims) != 1:
                raise MeasureError("dimension mismatch among atoms")
            dim = dims.pop()
            if "dim" in data and int(data["dim"]) != dim:
                raise MeasureError(
                    f"dimension mismatch: dim={data['dim']} but atoms have {dim}")
            return DiscreteMeasure(np.array(rows, dtype=float), weights)
        if kind == "grid":
            shape = tuple(int(s) for s in data["shape"])
            values = np.array(data["values"], dtype=float)
            if values.size != int(np.prod(shape)):
                raise MeasureError("values length does not match shape")
            if "dim" in data and int(data["dim"]) != len(shape):
                raise MeasureError("dimension mismatch between dim and shape")
            return GridDensity(data["origin"], data["spacing"],
                               values.reshape(shape))
    except (KeyError, TypeError) as exc:
        raise MeasureError(f"malformed measure: {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, MeasureError):
            raise
        raise MeasureError(f"malformed measure: {exc}") from exc
    raise MeasureError(f"unknown measure type {kind!r}")


def load_measure(source) -> Union[DiscreteMeasure, GridDensity]:
    """Load a measure from a path, JSON text, raw bytes or a parsed dict."""
    if isinstance(source, dict):
        return measure_from_dict(source)
    if isinstance(source, (bytes, bytearray)):
        text = source.decode("utf-8")
    elif isinstance(source, str) and source.lstrip().startswith("{"):
        text = source
    else:
        text = Path(source).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MeasureError(f"malformed JSON: {exc}") from exc
    return measure_from_dict(data)


def save_measure(m: Measure, path) -> None:
    Path(path).write_text(json.dumps(measure_to_dict(m)))


def measure_to_csv(m: Measure) -> str:
    """One atom (or cell) per row: coordinates then weight (or density)."""
    if isinstance(m, DiscreteMeasure):
        pts, w = m.atoms, m.weights
        header = [f"x{k}" for k in range(m.dim)] + ["weight"]
    elif isinstance(m, GridDensity):
        pts, w = m.centers(), m.values.reshape(-1)
        header = [f"x{k}" for k in range(m.dim)] + ["density"]
    else:
        pts = 0.5 * (m.edges[1:] + m.edges[:-1])[:, None]
        w = m.values
        header = ["x0", "density"]
    lines = [",".join(header)]
    for p, wi in zip(pts, w):
        lines.append(",".join(repr(float(v)) for v in (*p, wi)))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# moments

def _abs_integral(a, b):
    """Exact integral of |x| over [a, b]."""
    return 0.5 * (b * np.abs(b) - a * np.abs(a))


def barycenter(m: Measure) -> np.ndarray:
    if isinstance(m, DiscreteMeasure):
        return m.weights @ m.atoms
    if isinstance(m, GridDensity):
        return m.cell_masses().reshape(-1) @ m.centers()
    e, mass = line_partition(m)
    return np.array([mass @ (0.5 * (e[1:] + e[:-1]))])


def _extent(m: Measure) -> float:
    if isinstance(m, DiscreteMeasure):
        return float(np.max(np.abs(m.atoms)))
    e, _ = (line_partition(m) if m.dim == 1 or isinstance(m, PiecewiseDensity)
            else (np.concatenate([m.axis_edges(k) for k in range(m.dim)]), None))
    return float(np.max(np.abs(e)))


def center(m: Measure) -> Measure:
    """Translate ``m`` so that its barycenter is the origin."""
    b = barycenter(m)
    # already centered up to roundoff: return m itself so center is idempotent
    if np.max(np.abs(b)) <= 1e-14 * (1.0 + _extent(m)):
        return m
    return m.translate(-b)


def first_moment(m: Measure) -> float:
    """Integral of |x|. Exact for 1D piecewise-constant densities,
    cell-center rule for grids in d >= 2."""
    if isinstance(m, DiscreteMeasure):
        return float(m.weights @ np.linalg.norm(m.atoms, axis=1))
    if m.dim == 1:
        e, mass = line_partition(m)
        dens = mass / np.diff(e)
        return float(dens @ _abs_integral(e[:-1], e[1:]))
    c = m.centers()
    return float(m.cell_masses().reshape(-1) @ np.linalg.norm(c, axis=1))


def second_moment(m: Measure) -> float:
    """Integral of |x|^2 (exact for piecewise-constant densities)."""
    if isinstance(m, DiscreteMeasure):
        return float(m.weights @ np.sum(m.atoms ** 2, axis=1))
    if m.dim == 1:
        e, mass = line_partition(m)
        dens = mass / np.diff(e)
        return float(dens @ ((e[1:] ** 3 - e[:-1] ** 3) / 3.0))
    c = m.centers()
    per_cell = np.sum(c ** 2, axis=1) + np.sum(m.spacing ** 2) / 12.0
    return float(m.cell_masses().reshape(-1) @ per_cell)


# ---------------------------------------------------------------------------
# degeneracy and the constant c(mu)

def hyperplane_check(mu: DiscreteMeasure) -> HyperplaneReport:
    b = barycenter(mu)
    y = mu.atoms - b
    cov = (y * mu.weights[:, None]).T @ y
    evals, evecs = np.linalg.eigh(cov)
    if evals[0] > DEGENERACY_EIG:
        return HyperplaneReport(False)
    e = evecs[:, 0]
    lead = np.flatnonzero(np.abs(e) > 1e-12)[0]
    if e[lead] < 0:
        e = -e
    e = _frozen(e)
    return HyperplaneReport(True, e, float(b @ e))


def weighted_median(values, weights) -> float:
    """Lowest value whose cumulative weight reaches one half."""
    values = np.asarray(values, float)
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(np.asarray(weights, float)[order])
    k = int(np.searchsorted(cum, 0.5 * cum[-1] - 1e-12))
    return float(values[order][k])


def _median_dispersion(proj: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """For each row of projections, sum_i w_i |p_i - median|."""
    order = np.argsort(proj, axis=1, kind="stable")
    p = np.take_along_axis(proj, order, axis=1)
    cum = np.cumsum(weights[order], axis=1)
    k = np.argmax(cum >= 0.5 - 1e-12, axis=1)
    med = p[np.arange(len(p)), k]
    return np.sum(weights[order] * np.abs(p - med[:, None]), axis=1)


@dataclass(frozen=True)
class CMuResult:
    value: float
    direction: np.ndarray
    offset: float
    certified: bool
    evaluations: int = field(default=0, compare=False)


def _angle_dispersion(mu: DiscreteMeasure, theta: np.ndarray) -> np.ndarray:
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return _median_dispersion(dirs @ mu.atoms.T, mu.weights)


def c_mu_search(mu: DiscreteMeasure, tol: float = 1e-6,
                seed: int = 0, n_grid: int = 720) -> CMuResult:
    """Minimize ``(1/2d) * sum_i w_i |y_i.e - l|`` over unit e and real l.

    d = 1 is exact. For d = 2 the angular function is Lipschitz with
    constant at most ``sum_i w_i |y_i|``; a 720-point grid is refined by
    golden-section search and then by Lipschitz branch and bound until the
    returned value is within ``tol`` of the true minimum. For d >= 3 a seeded
    multi-start search returns an upper bound (``certified=False``).
    """
    d = mu.dim
    w = mu.weights
    if d == 1:
        ell = weighted_median(mu.atoms[:, 0], w)
        val = float(w @ np.abs(mu.atoms[:, 0] - ell)) / 2.0
        return CMuResult(val, _frozen([1.0]), ell, True, 1)

    if d == 2:
        scale = 2.0 * d
        lip = float(w @ np.linalg.norm(mu.atoms, axis=1)) / scale
        f = lambda th: _angle_dispersion(mu, np.atleast_1d(th)) / scale
        theta = np.linspace(0.0, np.pi, n_grid + 1)
        vals = f(theta)
        evals = len(theta)
        k = int(np.argmin(vals))
        lo, hi = theta[max(k - 1, 0)], theta[min(k + 1, n_grid)]
        res = optimize.minimize_scalar(lambda t: f(t)[0], bracket=None,
                                       bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-12})
        best_theta, best = theta[k], vals[k]
        if res.fun < best:
            best_theta, best = float(res.x), float(res.fun)
        evals += res.nfev

        # branch and bound: every interval's Lipschitz lower bound must
        # clear best - tol
        a, b = theta[:-1], theta[1:]
        fa, fb = vals[:-1], vals[1:]
        while True:
            lower = 0.5 * (fa + fb) - 0.5 * lip * (b - a)
            keep = lower < best - tol
            if not np.any(keep):
                break
            a, b, fa, fb = a[keep], b[keep], fa[keep], fb[keep]
            mid = 0.5 * (a + b)
            fm = f(mid)
            evals += len(mid)
            j = int(np.argmin(fm))
            if fm[j] < best:
                best, best_theta = float(fm[j]), float(mid[j])
            a, b = np.concatenate([a, mid]), np.concatenate([mid, b])
            fa, fb = np.concatenate([fa, fm]), np.concatenate([fm, fb])
        e = np.array([math.cos(best_theta), math.sin(best_theta)])
        ell = weighted_median(mu.atoms @ e, w)
        return CMuResult(float(best), _frozen(e), ell, True, evals)

    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(4000, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    vals = _median_dispersion(dirs @ mu.atoms.T, w)

    def obj(v):
        n = np.linalg.norm(v)
        if n == 0:
            return np.inf
        return float(_median_dispersion(((v / n) @ mu.atoms.T)[None], w)[0])

    best_v, best = dirs[np.argmin(vals)], float(vals.min())
    for k in np.argsort(vals)[:5]:
        r = optimize.minimize(obj, dirs[k], method="Nelder-Mead",
                              options={"xatol": 1e-10, "fatol": 1e-12})
        if r.fun < best:
            best, best_v = float(r.fun), r.x / np.linalg.norm(r.x)
    ell = weighted_median(mu.atoms @ best_v, w)
    return CMuResult(best / (2.0 * d), _frozen(best_v), ell, False)


def c_mu(mu: DiscreteMeasure, tol: float = 1e-6, seed: int = 0) -> float:
    """The constant in the lower bound T(rho, mu) >= c(mu) * M1(rho)."""
    return c_mu_search(mu, tol=tol, seed=seed).value


# ---------------------------------------------------------------------------
# approximation operators

def truncate_with_atom(mu: DiscreteMeasure, n: float) -> DiscreteMeasure:
    """Keep atoms in the closed ball B(0, n); collapse the rest onto their
    barycenter. Mass and barycenter are preserved."""
    inside = np.linalg.norm(mu.atoms, axis=1) <= n
    if inside.all():
        return mu
    tail_w = mu.weights[~inside]
    v = (tail_w @ mu.atoms[~inside]) / tail_w.sum()
    atoms = np.vstack([mu.atoms[inside], v[None]])
    weights = np.concatenate([mu.weights[inside], [tail_w.sum()]])
    return DiscreteMeasure(atoms, weights)


def restrict_renormalize(rho: GridDensity, n: float) -> GridDensity:
    """Zero the density on cells whose center lies outside B(0, n) and
    rescale to unit mass."""
    inside = (np.linalg.norm(rho.centers(), axis=1) <= n).reshape(rho.shape)
    mass = float(np.sum(rho.values[inside]) * rho.cell_volume)
    if mass <= 1e-12:
        raise MeasureError(f"restricted mass {mass:.3g} is zero")
    return GridDensity(rho.origin, rho.spacing,
                       np.where(inside, rho.values, 0.0) / mass)
