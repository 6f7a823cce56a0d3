"""Grid treatment of the primal problem min E(rho) + T(rho, mu) in 1D:
objective evaluation, a damped fixed-point solver built from the
optimality condition rho = exp(-u)/Z, the slab example where no
minimizer exists, and displacement-convexity checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .entropy import entropy
from .measures import (DiscreteMeasure, GridDensity, MeasureError,
                       barycenter, first_moment, hyperplane_check)
from .moment_solver import density_on_grid
from .ot_core import (correlation_slope, geodesic, max_correlation_grid)


def objective_P(rho, mu: DiscreteMeasure) -> float:
    """E(rho) + T(rho, mu) for a 1D density and a 1D discrete measure."""
    if getattr(rho, "dim", 1) != 1 or mu.dim != 1:
        raise MeasureError("objective_P is 1D only")
    return entropy(rho) + max_correlation_grid(rho, mu).value


@dataclass(frozen=True)
class PrimalReport:
    final_density: GridDensity
    objective_trace: list
    fixed_point_residual: float
    iterations: int
    converged: bool
    expanded: bool = False
    potential: object = field(default=None, repr=False)

    def to_dict(self) -> dict:
        rho = self.final_density
        return {"origin": rho.origin.tolist(), "spacing": rho.spacing.tolist(),
                "values": rho.values.tolist(),
                "objective_trace": [float(x) for x in self.objective_trace],
                "fixed_point_residual": self.fixed_point_residual,
                "iterations": self.iterations, "converged": self.converged}


def _default_window(mu: DiscreteMeasure) -> float:
    y = mu.atoms[:, 0]
    return 40.0 / min(-float(y.min()), float(y.max()))


def solve_fixed_point(mu: DiscreteMeasure, grid=None, damping: float = 0.5,
                      tol: float = 1e-6, max_iter: int = 5000) -> PrimalReport:
    """Iterate rho <- (1 - theta) rho + theta exp(-u)/Z on a 1D grid, with
    u the Kantorovich potential of T(rho, mu) and exp(-u) averaged exactly
    over each grid cell and normalized on the grid.

    ``grid = (lo, hi, n)``; by default [-L, L] with 8192 cells and L large
    enough for exp(-u) to decay by e^{-40}. In that case the window is
    doubled once if the converged density is not below 1e-12 (relative to
    its peak) at both ends.
    """
    if mu.dim != 1:
        raise MeasureError("solve_fixed_point is 1D only")
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    if abs(float(barycenter(mu)[0])) > 1e-9:
        raise MeasureError("center mu first")
    if len(mu) < 2 or hyperplane_check(mu).degenerate:
        raise MeasureError("mu is supported on a point")
    auto = grid is None
    if auto:
        L = _default_window(mu)
        lo, hi, n = -L, L, 8192
    else:
        lo, hi, n = grid
        n = int(n)
    expanded = False
    rho = GridDensity.uniform(lo, hi, n)
    trace = []
    it = 0
    while True:
        res = _iterate(rho, mu, lo, hi, n, damping, tol, max_iter - it, trace)
        rho, resid, k, converged, pot = res
        it += k
        if not (auto and converged and not expanded):
            break
        edge = max(rho.values[0], rho.values[-1]) / rho.values.max()
        if edge < 1e-12:
            break
        expanded = True
        lo, hi = 2 * lo, 2 * hi
        rho = density_on_grid(pot, lo, hi, n)
    return PrimalReport(rho, trace, resid, it, converged, expanded, pot)


def _iterate(rho, mu, lo, hi, n, theta, tol, budget, trace):
    resid = math.inf
    pot = None
    for k in range(budget + 1):
        corr = max_correlation_grid(rho, mu)
        pot = corr.potential
        trace.append(entropy(rho) + corr.value)
        target = density_on_grid(pot, lo, hi, n)
        resid = float(np.max(np.abs(rho.values - target.values)))
        if resid <= tol:
            return rho, resid, k, True, pot
        if k == budget:
            break
        vals = (1.0 - theta) * rho.values + theta * target.values
        rho = GridDensity(rho.origin, rho.spacing, vals)
    return rho, resid, budget, False, pot


class DemoRow(NamedTuple):
    n: float
    entropy: float
    correlation_bound: float
    objective_upper_bound: float


def hyperplane_divergence_demo(mu: DiscreteMeasure, n_list) -> list:
    """E(rho_n) + sqrt(d) M1(mu) for rho_n uniform on [-1, 1]^{d-1} x [-n, n].

    mu must lie in {x_d = 0}; then T(rho_n, mu) <= sqrt(d) M1(mu) for every
    n while E(rho_n) = -ln(2^d n), so the objective is unbounded below.
    """
    d = mu.dim
    if np.max(np.abs(mu.atoms[:, -1])) > 1e-12:
        raise MeasureError("mu must be concentrated on {last coordinate = 0}")
    bound = math.sqrt(d) * first_moment(mu)
    rows = []
    for n in n_list:
        if n <= 0:
            raise ValueError("n must be positive")
        lo = np.r_[-np.ones(d - 1), -n]
        width = np.r_[2.0 * np.ones(d - 1), 2.0 * n]
        # uniform density on a box of volume V: E = -ln V in closed form
        e = -math.log(float(np.prod(width)))
        rows.append(DemoRow(float(n), e, bound, e + bound))
    return rows


def demo_csv(rows) -> str:
    lines = ["n,entropy,correlation_bound,objective_upper_bound"]
    for r in rows:
        n = int(r.n) if float(r.n).is_integer() else r.n
        lines.append(f"{n},{r.entropy:.6f},{r.correlation_bound:.6f},"
                     f"{r.objective_upper_bound:.6f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# displacement convexity

def random_density_1d(rng, n_cells: Optional[int] = None) -> GridDensity:
    """Random smooth-ish 1D density: a 1-3 component mixture of Gaussian
    and Laplace bumps on a grid wide enough to hold its tails."""
    k = int(rng.integers(1, 4))
    locs = rng.uniform(-2, 2, k)
    scales = rng.uniform(0.3, 1.5, k)
    wts = rng.dirichlet(np.ones(k))
    kinds = rng.integers(0, 2, k)
    lo = float(np.min(locs - 12 * scales))
    hi = float(np.max(locs + 12 * scales))
    n = int(n_cells or rng.integers(100, 400))

    def f(x):
        out = np.zeros_like(x)
        for a, s, wt, kind in zip(locs, scales, wts, kinds):
            z = (x - a) / s
            out += wt * (np.exp(-0.5 * z * z) if kind == 0
                         else np.exp(-np.abs(z))) / s
        return out

    return GridDensity.from_function(f, lo, hi, n)


@dataclass(frozen=True)
class ConvexityReport:
    pairs: int
    times: tuple
    entropy_values: list
    correlation_values: list
    violations: list
    strict_checks: int
    strict_violations: list
    slope_violations: list

    @property
    def ok(self) -> bool:
        return not (self.violations or self.strict_violations
                    or self.slope_violations)


TIMES = (0.0, 0.25, 0.5, 0.75, 1.0)


def _midpoint_gaps(f):
    """f(t) - (f(t-1/4) + f(t+1/4))/2 at t = 1/4, 1/2, 3/4, and the
    half-interval gap f(1/2) - (f(0) + f(1))/2."""
    f = np.asarray(f)
    inner = f[1:4] - 0.5 * (f[0:3] + f[2:5])
    return np.r_[inner, f[2] - 0.5 * (f[0] + f[4])]


def displacement_convexity_suite(samples, mu: DiscreteMeasure, seed: int = 0,
                                 tol: float = 1e-7, h: float = 1e-4
                                 ) -> ConvexityReport:
    """Check convexity of E and T(., mu) along 1D W2 geodesics.

    ``samples`` is a number of random pairs or a list of (rho0, rho1).
    Along each geodesic (exact piecewise-constant interpolants) both
    functionals must be midpoint convex within ``tol``; the entropy must
    be strictly convex at t = 1/2 when the displacement T(x) - x has range
    above 1e-3; and the forward difference of T at 0 must dominate the
    first-variation integral within 1e-3.
    """
    if mu.dim != 1:
        raise MeasureError("displacement_convexity_suite is 1D only")
    if isinstance(samples, int):
        rng = np.random.default_rng(seed)
        pairs = [(random_density_1d(rng), random_density_1d(rng))
                 for _ in range(samples)]
    else:
        pairs = list(samples)
    E_all, T_all, bad, strict_bad, slope_bad = [], [], [], [], []
    strict = 0
    for k, (r0, r1) in enumerate(pairs):
        path = geodesic(r0, r1)
        dens = [path.exact(t) for t in TIMES]
        E = [entropy(p) for p in dens]
        T = [max_correlation_grid(p, mu).value for p in dens]
        E_all.append(E)
        T_all.append(T)
        for name, f in (("entropy", E), ("correlation", T)):
            gaps = _midpoint_gaps(f)
            if np.any(gaps > tol):
                bad.append((k, name, float(gaps.max())))
        (a0, b0), (a1, b1) = path.q0, path.q1
        disp = np.r_[a1 - a0, b1 - b0]
        if np.ptp(disp) > 1e-3:
            strict += 1
            if not E[2] < 0.5 * (E[0] + E[4]) - 1e-9:
                strict_bad.append((k, E[2] - 0.5 * (E[0] + E[4])))
        fd = (max_correlation_grid(path.exact(h), mu).value - T[0]) / h
        first_var = correlation_slope(r0, r1, mu)
        if fd < first_var - 1e-3:
            slope_bad.append((k, fd - first_var))
    return ConvexityReport(len(pairs), TIMES, E_all, T_all, bad, strict,
                           strict_bad, slope_bad)
