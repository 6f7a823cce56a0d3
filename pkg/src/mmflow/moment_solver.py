"""Variational solver for moment measures.

For a centered, full-dimensional discrete mu we look for u(x) =
max_i (x.y_i - v_i) with pieces anchored at mu's atoms such that the
gradient of u pushes exp(-u)/Z onto mu. The offsets minimize

    J(v) = sum_i mu_i v_i - ln Z(v),    Z(v) = integral of exp(-u_v),

whose gradient is mu - m(v)/Z(v) (m_i = mass of exp(-u) on cell i).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .convex import (MaxAffineConvex, RecessionError, cell_integrals,
                     conjugate_value, log_interval_integral, prune)
from .entropy import entropy
from .measures import (DiscreteMeasure, GridDensity, MeasureError,
                       barycenter, hyperplane_check)
from .ot_core import max_correlation_grid

ARMIJO_C = 1e-4
CENTER_TOL = 1e-9


class SolverError(RuntimeError):
    """The iteration could not reach the requested tolerance."""


def _u(mu: DiscreteMeasure, v) -> MaxAffineConvex:
    return MaxAffineConvex(mu.atoms, v)


def objective_J(v, mu: DiscreteMeasure) -> float:
    v = np.asarray(v, float)
    ci = cell_integrals(_u(mu, v))
    return float(mu.weights @ v - ci.log_z)


def gradient_J(v, mu: DiscreteMeasure) -> np.ndarray:
    ci = cell_integrals(_u(mu, v))
    return mu.weights - ci.probabilities


def _hessian_from(ci, k: int) -> np.ndarray:
    p = ci.probabilities
    L = np.zeros((k, k))
    for (i, j), lw in ci.edges.items():
        w = math.exp(lw - ci.log_z)
        L[i, j] -= w
        L[j, i] -= w
        L[i, i] += w
        L[j, j] += w
    return L - np.diag(p) + np.outer(p, p)


def hessian_J(v, mu: DiscreteMeasure) -> np.ndarray:
    """Second derivative of J (d = 1, 2): L(w)/Z - diag(p) + p p^T, with L
    the graph Laplacian of the cell adjacency weighted by the integral of
    exp(-u) over each shared face divided by |y_i - y_j|."""
    ci = cell_integrals(_u(mu, v))
    if mu.dim > 2:
        raise ValueError("Hessian is available for d = 1 and d = 2")
    return _hessian_from(ci, len(mu))


@dataclass(frozen=True)
class SolveReport:
    offsets: np.ndarray
    log_z: float
    gradient_norm: float
    objective_trace: list
    iterations: int
    residual: float
    converged: bool
    objective: float
    gauge: str
    u: MaxAffineConvex = field(repr=False)

    def to_dict(self) -> dict:
        return {"offsets": self.offsets.tolist(), "logZ": self.log_z,
                "residual": self.residual,
                "gradient_norm": self.gradient_norm,
                "iterations": self.iterations, "converged": self.converged,
                "objective": self.objective, "gauge": self.gauge,
                "trace": [[int(k), float(j)] for k, j in self.objective_trace],
                "sites": self.u.sites.tolist()}


def _check_input(mu: DiscreteMeasure):
    b = barycenter(mu)
    if np.max(np.abs(b)) > CENTER_TOL:
        raise MeasureError(
            f"barycenter of mu is {b.tolist()}, not 0: center mu first")
    if len(mu) < mu.dim + 1 or hyperplane_check(mu).degenerate:
        raise MeasureError("mu is supported on a hyperplane")


def _newton_direction(H, g, sites):
    """-H^+ g restricted to the complement of the gauge directions."""
    k = len(g)
    gauge = np.column_stack([np.ones(k), sites])
    Qg, _ = np.linalg.qr(gauge)
    P = np.eye(k) - Qg @ Qg.T
    Hs = P @ (0.5 * (H + H.T)) @ P
    lam, V = np.linalg.eigh(Hs)
    big = np.abs(lam) > 1e-10 * max(1.0, float(np.max(np.abs(lam))))
    coef = V[:, big].T @ (P @ g)
    d = -V[:, big] @ (coef / np.abs(lam[big]))
    return d


def _reopen(u: MaxAffineConvex, v: np.ndarray, i: int, sites, state, J):
    """Lower offset i to u*(y_i) - delta, where the depth delta is picked
    among doublings or halvings of a tenth of the nearest-site distance.
    J is convex in v_i, so the first doubling that stops lowering J
    brackets the best depth. Returns the new (v, u, ci, J), or None when
    no depth lowers J."""
    dist = np.linalg.norm(sites - sites[i], axis=1)
    delta = 0.1 * float(np.min(dist[dist > 0]))
    top = min(float(v[i]), conjugate_value(u, sites[i]))

    def at(delta):
        w = v.copy()
        w[i] = top - delta
        return state(w)

    best = at(delta)
    if best[3] < J:
        while delta < 1e6:
            delta *= 2.0
            nxt = at(delta)
            if nxt[3] >= best[3]:
                break
            best = nxt
        return best
    for _ in range(60):
        delta *= 0.5
        best = at(delta)
        if best[3] < J:
            return best
    return None


def solve(mu: DiscreteMeasure, tol: float = 1e-8, max_iter: int = 5000,
          init=None, method: str = "newton", seed: Optional[int] = None,
          raise_on_failure: bool = False) -> SolveReport:
    """Minimize J over the offsets.

    ``method="newton"`` takes damped Newton steps (pseudo-inverse of the
    Hessian on the complement of the gauge directions, falling back to the
    negative gradient when that is not a descent direction);
    ``method="gradient"`` uses the plain gradient. Both use Armijo
    backtracking (c = 1e-4, halving) and fix the additive constant after
    every accepted step. On exit e^{-u} is translated to barycenter 0 and
    normalized to unit mass.

    ``init`` defaults to v_i = |y_i|^2 / 2; an integer ``seed`` perturbs
    that start with uniform noise in [-0.5, 0.5].
    """
    _check_input(mu)
    if method not in ("newton", "gradient"):
        raise ValueError("method must be 'newton' or 'gradient'")
    if mu.dim > 2 and method == "newton":
        method = "gradient"
    y, w = mu.atoms, mu.weights
    if init is None:
        v = 0.5 * np.sum(y ** 2, axis=1)
        if seed is not None:
            v = v + np.random.default_rng(seed).uniform(-0.5, 0.5, len(v))
    else:
        v = np.array(init, float)
    v = v - w @ v

    def state(v):
        u = _u(mu, v)
        ci = cell_integrals(u)
        return u, ci, float(w @ v - ci.log_z)

    def centered_state(v):
        v = v - w @ v
        return (v,) + state(v)

    u, ci, J = state(v)
    trace = [(0, J)]
    it = 0
    converged = False
    while True:
        g = w - ci.probabilities
        residual = float(np.max(np.abs(g)))
        if residual <= tol:
            converged = True
            break
        if it >= max_iter:
            break
        it += 1
        starved = np.flatnonzero(ci.probabilities < 1e-6 * w)
        if len(starved):
            # pieces with (almost) no mass get no Newton component: reopen
            # their cells by a direct search along their own offset
            moved = False
            for i in starved:
                res = _reopen(u, v, int(i), y, centered_state, J)
                if res is not None:
                    v, u, ci, J = res
                    moved = True
            if moved:
                trace.append((it, J))
                continue
        d = None
        if method == "newton":
            d = _newton_direction(_hessian_from(ci, len(mu)), g, y)
            if not np.all(np.isfinite(d)) or g @ d >= 0:
                d = None
        if d is None:
            d = -g
        slope = float(g @ d)
        step, accepted = 1.0, False
        while step > 1e-30:
            v_try = v + step * d
            v_try = v_try - w @ v_try
            u_t, ci_t, J_t = state(v_try)
            if J_t <= J + ARMIJO_C * step * slope and J_t < J:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            # at the roundoff floor J cannot resolve the decrease; keep the
            # longest halved step that shrinks the residual
            step = 1.0
            while step > 1e-12:
                v_try = v + step * d
                v_try = v_try - w @ v_try
                u_t, ci_t, J_t = state(v_try)
                r_t = float(np.max(np.abs(w - ci_t.probabilities)))
                if r_t < residual and abs(J_t - J) <= 1e-13 * (1 + abs(J)):
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break
            v, u, ci = v_try, u_t, ci_t
            continue
        v, u, ci, J = v_try, u_t, ci_t, J_t
        trace.append((it, J))

    g = w - ci.probabilities
    residual = float(np.max(np.abs(g)))
    # translation gauge: barycenter of exp(-u) at the origin
    b = ci.probabilities @ ci.mean
    v = v - y @ b
    # unit mass: Z(v + c) = e^c Z(v)
    v = v - cell_integrals(_u(mu, v)).log_z
    u_final = _u(mu, v)
    ci_final = cell_integrals(u_final)
    report = SolveReport(
        offsets=v, log_z=float(ci_final.log_z),
        gradient_norm=float(np.linalg.norm(g)), objective_trace=trace,
        iterations=it, residual=residual, converged=converged,
        objective=float(w @ v - ci_final.log_z),
        gauge="constant: offsets shifted so that Z = 1; "
              "translation: barycenter of exp(-u) at 0",
        u=u_final)
    if not converged and raise_on_failure:
        raise SolverError(
            f"residual {residual:.3g} above tol {tol:.3g} after {it} steps")
    return report


class MomentMeasureResult(NamedTuple):
    measure: DiscreteMeasure
    inactive: np.ndarray


def moment_measure(u: MaxAffineConvex, return_inactive: bool = False):
    """(grad u)_# exp(-u)/Z: active sites weighted by m_i / Z.

    With ``return_inactive`` the indices of pieces with an empty cell
    (weight 0, omitted from the measure) are returned as well.
    """
    ci = cell_integrals(u)
    p = ci.probabilities
    keep = p > 0
    m = DiscreteMeasure(u.sites[keep], p[keep])
    if return_inactive:
        return MomentMeasureResult(m, np.flatnonzero(~keep))
    return m


class MomentIdentity(NamedTuple):
    lhs: float
    rhs: float
    gap: float


def verify_moment_identity(u: MaxAffineConvex) -> MomentIdentity:
    """d Z against sum_i y_i . (integral of x exp(-u) over cell i); equal
    for max-affine u by integration by parts."""
    ci = cell_integrals(u)
    z = math.exp(ci.log_z)
    lhs = u.dim * z
    mass = np.exp(ci.log_mass)
    rhs = float(np.sum(mass * np.einsum("kd,kd->k", u.sites, ci.mean)))
    return MomentIdentity(lhs, rhs, lhs - rhs)


def density_on_grid(u: MaxAffineConvex, lo: float, hi: float,
                    n: int) -> GridDensity:
    """exp(-u) averaged exactly over each cell of a uniform 1D grid and
    normalized on [lo, hi]."""
    if u.dim != 1:
        raise ValueError("density_on_grid is 1D only")
    p = prune(u)
    idx = np.flatnonzero(p.active)
    s = p.sites[idx, 0]
    order = np.argsort(s)
    idx, s = idx[order], s[order]
    v = p.offsets[idx]
    b = (v[1:] - v[:-1]) / (s[1:] - s[:-1])
    edges = np.linspace(lo, hi, n + 1)
    pts = np.unique(np.concatenate([edges, b[(b > lo) & (b < hi)]]))
    mid = 0.5 * (pts[:-1] + pts[1:])
    k = np.searchsorted(b, mid)
    logm = v[k] + log_interval_integral(-s[k], pts[:-1], pts[1:])
    shift = float(np.max(logm))
    sub = np.exp(logm - shift)
    cell = np.clip(np.searchsorted(edges, mid, side="right") - 1, 0, n - 1)
    mass = np.bincount(cell, sub, minlength=n)
    h = (hi - lo) / n
    return GridDensity([lo], [h], mass / (mass.sum() * h))


def auto_window(u: MaxAffineConvex, tail: float = 40.0) -> tuple[float, float]:
    """Interval outside of which exp(-u)/max exp(-u) < e^{-tail} (1D)."""
    p = prune(u)
    idx = np.flatnonzero(p.active)
    s = p.sites[idx, 0]
    order = np.argsort(s)
    s, v = s[order], p.offsets[idx][order]
    b = (v[1:] - v[:-1]) / (s[1:] - s[:-1])
    u_min = float(np.min(p(b))) if len(b) else 0.0
    # beyond the extreme breakpoints u is affine with slope s[0] / s[-1]
    lo = b[0] - (tail - (float(p(b[0])) - u_min)) / (-s[0])
    hi = b[-1] + (tail - (float(p(b[-1])) - u_min)) / s[-1]
    lo = min(lo, float(b.min()) - 1.0)
    hi = max(hi, float(b.max()) + 1.0)
    return lo, hi


def duality_gap(mu: DiscreteMeasure, report: SolveReport, grid=None,
                n_cells: int = 8192) -> float:
    """|E(rho*) + T(rho*, mu) - J(v*)| with rho* = exp(-u_final) on a grid.

    ``grid`` is ``(lo, hi, n)``; by default the window is chosen so that
    the discarded tails are below e^{-40} of the peak.
    """
    if mu.dim != 1:
        raise ValueError("duality_gap is 1D only")
    if grid is None:
        lo, hi = auto_window(report.u)
        n = n_cells
    else:
        lo, hi, n = grid
    rho = density_on_grid(report.u, lo, hi, int(n))
    J = objective_J(report.offsets, mu)
    return abs(entropy(rho) + max_correlation_grid(rho, mu).value - J)
