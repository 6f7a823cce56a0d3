"""Quick seeded invariant checks for every module (used by ``mmflow verify``)."""

from __future__ import annotations

import math
from typing import Callable, NamedTuple

import numpy as np

from . import convex, measures as ms, moment_solver as msol
from . import ot_core, primal_verify
from .entropy import entropy, entropy_lower_bound_constant


class Check(NamedTuple):
    module: str
    name: str
    passed: bool
    detail: str


def _random_discrete(rng, n, d, centered=True):
    w = rng.dirichlet(np.ones(n))
    m = ms.DiscreteMeasure(rng.normal(size=(n, d)), w)
    return ms.center(m) if centered else m


def _measures(rng):
    mu = _random_discrete(rng, 7, 2)
    back = ms.load_measure(ms.measure_to_dict(mu))
    yield "json round trip", back == mu, ""
    t = ms.truncate_with_atom(mu, 0.8)
    err = float(np.max(np.abs(ms.barycenter(t) - ms.barycenter(mu))))
    yield "truncation keeps barycenter", err <= 1e-12, f"{err:.2e}"
    c = ms.c_mu(ms.DiscreteMeasure([-1, 1], [0.5, 0.5]))
    yield "c(mu) two atoms", abs(c - 0.5) <= 1e-12, f"{c!r}"


def _entropy(rng):
    c1 = entropy_lower_bound_constant(1)
    yield "C_1 = 4/e", abs(c1 - 4 / math.e) <= 1e-10, f"{c1!r}"
    worst = math.inf
    for _ in range(20):
        rho = primal_verify.random_density_1d(rng)
        worst = min(worst, entropy(rho) + c1
                    + math.sqrt(ms.first_moment(rho)))
    yield "E >= -C_1 - sqrt(M1)", worst >= 0, f"min slack {worst:.3g}"


def _ot(rng):
    worst_gap, mono = 0.0, True
    for d in (1, 2):
        for _ in range(5):
            rho = _random_discrete(rng, int(rng.integers(2, 12)), d)
            mu = _random_discrete(rng, int(rng.integers(2, 12)), d)
            r = ot_core.max_correlation(rho, mu)
            worst_gap = max(worst_gap, abs(
                r.value - ot_core.dual_value(rho, mu, r.duals)))
            mono &= ot_core.check_cyclical_monotonicity(
                r.plan, (rho.atoms, mu.atoms))
    yield "LP duality gap", worst_gap <= 1e-8, f"{worst_gap:.2e}"
    yield "cyclical monotonicity", mono, ""


def _convex(rng):
    worst = 0.0
    for _ in range(10):
        k = int(rng.integers(3, 8))
        sites = np.sort(rng.normal(size=k))
        sites = sites - 0.5 * (sites[0] + sites[-1])
        u = convex.MaxAffineConvex(sites, rng.normal(size=k))
        z, _ = convex.integrate_exp_neg(u)
        worst = max(worst, abs(convex.cell_masses(u).sum() / z - 1))
    yield "sum of cell masses = Z", worst <= 1e-12, f"{worst:.2e}"
    x = np.linspace(-3, 3, 601)
    s = np.linspace(-2, 2, 41)
    err = float(np.max(np.abs(convex.conjugate_grid(x, 0.5 * x * x, s)
                              - 0.5 * s * s)))
    yield "x^2/2 is self-conjugate", err <= 1e-4, f"{err:.2e}"


def _solver(rng):
    mu = ms.DiscreteMeasure([-1, 1], [0.5, 0.5])
    rep = msol.solve(mu)
    err = float(np.max(np.abs(rep.offsets + math.log(2))))
    yield "two-atom solve", rep.converged and err <= 1e-6, f"{err:.2e}"
    mu = _random_discrete(rng, 6, 1)
    a, b = msol.solve(mu), msol.solve(mu, seed=int(rng.integers(1 << 30)))
    diff = float(np.max(np.abs(a.offsets - b.offsets)))
    yield "same offsets from two random starts", diff <= 1e-6, f"{diff:.2e}"


def _primal(rng):
    rows = primal_verify.hyperplane_divergence_demo(
        ms.DiscreteMeasure([0.0], [1.0]), [1, 5, 50, 500])
    err = max(abs(r.entropy + math.log(2 * r.n)) for r in rows)
    yield "slab entropy -ln(2n)", err <= 1e-12, f"{err:.2e}"
    mu = _random_discrete(rng, 4, 1)
    rep = primal_verify.displacement_convexity_suite(
        5, mu, seed=int(rng.integers(1 << 30)))
    yield "displacement convexity", rep.ok, f"{len(rep.violations)} violations"


SUITES: dict[str, Callable] = {
    "measures": _measures, "entropy": _entropy, "ot_core": _ot,
    "convex": _convex, "moment_solver": _solver, "primal_verify": _primal,
}


def run_all(seed: int = 0, modules=None) -> list[Check]:
    out = []
    for k, (name, suite) in enumerate(SUITES.items()):
        if modules and name not in modules:
            continue
        rng = np.random.default_rng([seed, k])
        for check, ok, detail in suite(rng):
            out.append(Check(name, check, bool(ok), detail))
    return out
