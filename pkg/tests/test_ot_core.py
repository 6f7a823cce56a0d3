import math

import numpy as np
import pytest

from conftest import full_dimensional, linprog_correlation, random_discrete
from mmflow._simplex import northwest_corner, transport_simplex
from mmflow.entropy import entropy
from mmflow.measures import (DiscreteMeasure, GridDensity, MeasureError,
                             barycenter, c_mu, first_moment, second_moment,
                             truncate_with_atom)
from mmflow.ot_core import (TransportPlan, TransportSizeError, correlation_slope,
                            check_cyclical_monotonicity, dual_value,
                            entropy_geodesic_derivative, geodesic,
                            max_correlation, max_correlation_grid, w2_distance,
                            witness_halfspace_plan)
from mmflow.primal_verify import random_density_1d


def _instances(rng, count=20):
    for k in range(count):
        d = 1 + k % 2
        rho = random_discrete(rng, int(rng.integers(1, 30)), d)
        mu = random_discrete(rng, int(rng.integers(1, 30)), d,
                             centered=bool(k % 3))
        yield rho, mu


def test_northwest_corner_basis_size(rng):
    a = rng.dirichlet(np.ones(5))
    b = rng.dirichlet(np.ones(7))
    flow, basis = northwest_corner(a, b)
    assert len(basis) == 5 + 7 - 1
    np.testing.assert_allclose(flow.sum(1), a, atol=1e-15)
    np.testing.assert_allclose(flow.sum(0), b, atol=1e-15)


def test_simplex_degenerate_ties():
    # uniform marginals with equal sizes: NW corner is maximally degenerate
    n = 12
    a = np.full(n, 1 / n)
    C = np.add.outer(np.arange(n), np.arange(n)) % 5 * 1.0
    res = transport_simplex(a, a, C)
    from scipy.optimize import linprog
    A = np.zeros((2 * n, n * n))
    for i in range(n):
        A[i, i * n:(i + 1) * n] = 1
        A[n + i, i::n] = 1
    ref = linprog(C.ravel(), A_eq=A, b_eq=np.r_[a, a], method="highs").fun
    assert abs(np.sum(res.flow * C) - ref) <= 1e-12


def test_examples(two_atoms):
    rho = random_discrete(np.random.default_rng(0), 6, 1)
    r = max_correlation(rho, DiscreteMeasure([0.0], [1.0]))
    assert r.value == 0.0
    r = max_correlation(two_atoms, two_atoms)
    assert r.value == 1.0
    entries = sorted(map(tuple, r.plan.entries.tolist()))
    assert entries == [(0.0, 0.0, 0.5), (1.0, 1.0, 0.5)]


def test_errors(two_atoms):
    with pytest.raises(MeasureError, match="dimension mismatch"):
        max_correlation(two_atoms, DiscreteMeasure([[0.0, 0.0]], [1.0]))
    big = DiscreteMeasure(np.arange(2001.0), np.full(2001, 1 / 2001))
    with pytest.raises(TransportSizeError, match="too large"):
        max_correlation(big, big)


def test_plan_and_duals(rng):
    for rho, mu in _instances(rng, 40):
        r = max_correlation(rho, mu)
        a, b = r.plan.marginals()
        assert np.max(np.abs(a - rho.weights)) <= 1e-9
        assert np.max(np.abs(b - mu.weights)) <= 1e-9
        assert abs(r.plan.mass.sum() - 1) <= 1e-9
        assert np.all(r.plan.mass > 0)
        G = rho.atoms @ mu.atoms.T
        slack = r.duals.u[:, None] + r.duals.u_star[None, :] - G
        assert slack.min() >= -1e-9
        assert np.max(np.abs(slack[r.plan.rows, r.plan.cols])) <= 1e-9
        assert abs(r.value - dual_value(rho, mu, r.duals)) <= 1e-8
        assert abs(r.value - linprog_correlation(rho, mu)) <= 1e-9


def test_dual_gauge(rng):
    rho, mu = random_discrete(rng, 8, 2), random_discrete(rng, 9, 2)
    r = max_correlation(rho, mu)
    assert abs(np.min(r.duals.u_star - 0.5 * np.sum(mu.atoms ** 2, 1))) <= 1e-14
    G = rho.atoms @ mu.atoms.T
    np.testing.assert_allclose(r.duals.u, np.max(G - r.duals.u_star, axis=1),
                               atol=1e-15)


def test_centered_nonnegative(rng):
    for _ in range(30):
        d = int(rng.integers(1, 3))
        r = max_correlation(random_discrete(rng, 7, d), random_discrete(rng, 5, d))
        assert r.value >= -1e-12


def test_monotonicity_and_support_bound(rng):
    for rho, mu in _instances(rng, 40):
        r = max_correlation(rho, mu)
        assert check_cyclical_monotonicity(r.plan, (rho.atoms, mu.atoms))
        if np.max(np.abs(barycenter(mu))) > 1e-12:
            continue
        G = rho.atoms @ mu.atoms.T
        assert np.all(G[r.plan.rows, r.plan.cols] >= -r.value - 1e-9)


def test_monotonicity_examples(two_atoms):
    anti = TransportPlan(2, 2, [[0, 1, 0.5], [1, 0, 0.5]])
    assert not check_cyclical_monotonicity(anti, ([-1.0, 1.0], [-1.0, 1.0]))
    single = TransportPlan(1, 1, [[0, 0, 1.0]])
    assert check_cyclical_monotonicity(single, ([3.0], [-2.0]))


def test_translation_invariance(rng):
    for _ in range(20):
        d = int(rng.integers(1, 3))
        rho = random_discrete(rng, 9, d, centered=False)
        mu = random_discrete(rng, 6, d)
        w = rng.normal(size=d) * 3
        a = max_correlation(rho, mu).value
        b = max_correlation(rho.translate(w), mu).value
        assert abs(a - b) <= 1e-9


def test_w2_examples(rng):
    mu = random_discrete(rng, 6, 2)
    assert w2_distance(mu, mu) <= 1e-12
    a = DiscreteMeasure([[1.0, 2.0]], [1.0])
    b = DiscreteMeasure([[4.0, -2.0]], [1.0])
    assert w2_distance(a, b) == pytest.approx(5.0)


def test_w2_identity(rng):
    for rho, mu in _instances(rng, 30):
        T = max_correlation(rho, mu).value
        W = w2_distance(rho, mu)
        rhs = 0.5 * second_moment(rho) + 0.5 * second_moment(mu) - 0.5 * W * W
        assert abs(T - rhs) <= 1e-8


def test_lower_bound(rng):
    for k in range(100):
        d = 1 + k % 2
        rho = random_discrete(rng, int(rng.integers(2, 15)), d)
        mu = full_dimensional(rng, int(rng.integers(3, 10)), d)
        T = max_correlation(rho, mu).value
        assert T >= c_mu(mu) * first_moment(rho) - 1e-6


def test_truncation_monotone(rng):
    for _ in range(10):
        d = int(rng.integers(1, 3))
        rho = random_discrete(rng, 10, d)
        mu = random_discrete(rng, 12, d, scale=2.0)
        T = max_correlation(rho, mu).value
        radii = np.linspace(0.1, np.max(np.linalg.norm(mu.atoms, axis=1)), 8)
        vals = [max_correlation(rho, truncate_with_atom(mu, n)).value
                for n in radii]
        assert all(v <= T + 1e-9 for v in vals)
        assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))
        assert abs(vals[-1] - T) <= 1e-12


def test_grid_examples(two_atoms):
    lap = GridDensity.from_function(lambda x: 0.5 * np.exp(-np.abs(x)),
                                    -40, 40, 16000)
    assert abs(max_correlation_grid(lap, two_atoms).value - 1.0) <= 1e-4
    assert max_correlation_grid(lap, DiscreteMeasure([0.0], [1.0])).value == 0.0
    uni = GridDensity.uniform(-1, 1, 1000)
    assert abs(max_correlation_grid(uni, two_atoms).value - 0.5) <= 1e-6


def test_grid_matches_discrete(rng):
    """A grid density with very narrow cells behaves like its atoms."""
    for _ in range(10):
        rho = random_density_1d(rng)
        mu = random_discrete(rng, 6, 1)
        g = max_correlation_grid(rho, mu)
        # exact value against an LP on a fine split of the grid cells
        e = rho.axis_edges(0)
        fine = np.linspace(0, 1, 9)
        pts = (e[:-1, None] + np.diff(e)[:, None] * (fine[1:] - 1 / 16)).ravel()
        wts = np.repeat(rho.cell_masses() / 8, 8)
        ref = max_correlation(DiscreteMeasure(pts, wts), mu).value
        assert abs(g.value - ref) <= 2 * rho.spacing[0] * np.max(np.abs(mu.atoms))


def test_grid_potential(rng):
    for _ in range(10):
        rho = random_density_1d(rng)
        mu = random_discrete(rng, 5, 1)
        g = max_correlation_grid(rho, mu)
        u = g.potential
        e = rho.axis_edges(0)
        assert abs(u(e[0])) <= 1e-12
        # duality: integral of u against rho plus sum mu_j u*(y_j)
        from mmflow.convex import evaluate
        c = rho.axis_centers(0)
        h = rho.spacing[0]
        # u is piecewise linear: Simpson per cell is exact away from kinks
        vals = (evaluate(u, e[:-1])[0] + 4 * evaluate(u, c)[0]
                + evaluate(u, e[1:])[0]) / 6
        dual = float(rho.values @ vals * h + mu.weights @ u.offsets)
        assert abs(dual - g.value) <= 1e-3 * h * len(mu)


def test_witness_examples(two_atoms):
    plan, val = witness_halfspace_plan(two_atoms, two_atoms)
    assert val == pytest.approx(1.0)
    assert sorted(map(tuple, plan.entries.tolist())) == [(0, 0, 0.5), (1, 1, 0.5)]
    with pytest.raises(MeasureError):
        witness_halfspace_plan(DiscreteMeasure([0.0], [1.0]), two_atoms)


def test_witness_bounds(rng):
    for k in range(60):
        d = 1 + k % 2
        rho = random_discrete(rng, int(rng.integers(2, 12)), d)
        mu = full_dimensional(rng, int(rng.integers(3, 8)), d)
        plan, val = witness_halfspace_plan(rho, mu)
        a, b = plan.marginals()
        assert np.max(np.abs(a - rho.weights)) <= 1e-9
        assert np.max(np.abs(b - mu.weights)) <= 1e-9
        assert val <= max_correlation(rho, mu).value + 1e-9
        assert val >= c_mu(mu) * first_moment(rho) - 1e-6


def test_geodesic_discrete(rng):
    a = DiscreteMeasure([0.0], [1.0])
    b = DiscreteMeasure([2.0], [1.0])
    p = geodesic(a, b)
    for t in (0.0, 0.3, 1.0):
        np.testing.assert_allclose(p(t).atoms, [[2 * t]])
    rho0, rho1 = random_discrete(rng, 5, 2), random_discrete(rng, 7, 2)
    p = geodesic(rho0, rho1)
    assert p(0) is rho0 and p(1) is rho1
    W = w2_distance(rho0, rho1)
    assert abs(w2_distance(p(0.25), p(0.75)) - 0.5 * W) <= 1e-9


def test_geodesic_grid(rng):
    for _ in range(10):
        r0, r1 = random_density_1d(rng), random_density_1d(rng)
        p = geodesic(r0, r1)
        assert p(0) is r0 and p(1) is r1
        np.testing.assert_allclose(p.exact(0).cell_masses().sum(), 1.0)
        W = w2_distance(r0, r1)
        for s, t in ((0.0, 1.0), (0.1, 0.6), (0.25, 0.75), (0.9, 0.3)):
            d = w2_distance(p.exact(s), p.exact(t))
            assert abs(d - abs(s - t) * W) <= 1e-4
        mid = p(0.5)
        assert isinstance(mid, GridDensity)
        assert mid.spacing[0] == r0.spacing[0]
        assert abs(entropy(mid) - entropy(p.exact(0.5))) <= 1e-2


def test_geodesic_translation(rng):
    r0 = random_density_1d(rng)
    r1 = r0.translate([2.5])
    p = geodesic(r0, r1)
    E = [entropy(p.exact(t)) for t in (0, 0.25, 0.5, 1)]
    np.testing.assert_allclose(E, E[0], atol=1e-10)


def test_entropy_derivative_examples():
    rho = GridDensity.from_function(lambda x: np.exp(-x * x / 2), -8, 8, 800)
    c = rho.axis_centers(0)
    assert abs(entropy_geodesic_derivative(rho, c)) <= 1e-12
    assert abs(entropy_geodesic_derivative(rho, c + 1.3)) <= 1e-12
    with pytest.raises(ValueError, match="monotone"):
        entropy_geodesic_derivative(rho, -c)


def test_entropy_derivative_finite_difference(rng):
    """Compare against the exact entropy of the pushforward by
    x -> x + h (T(x) - x), cell edges mapped exactly."""
    from mmflow.measures import PiecewiseDensity

    rho = GridDensity.from_function(lambda x: np.exp(-x * x / 2), -9, 9, 3600)
    e, c = rho.axis_edges(0), rho.axis_centers(0)
    h = 1e-4
    for _ in range(10):
        a, b, k = rng.uniform(0.1, 1), rng.uniform(-1, 1), rng.uniform(0.3, 2)
        disp = lambda x: a * np.tanh(k * x) + b + 0.1 * a * x
        D = entropy_geodesic_derivative(rho, c + disp(c))
        moved = e + h * disp(e)
        rho_h = PiecewiseDensity(moved, rho.cell_masses() / np.diff(moved))
        fd = (entropy(rho_h) - entropy(rho)) / h
        assert abs(D - fd) <= 1e-3 * abs(fd)


def test_correlation_slope_bound(rng):
    for _ in range(10):
        r0, r1 = random_density_1d(rng), random_density_1d(rng)
        mu = random_discrete(rng, 5, 1)
        p = geodesic(r0, r1)
        h = 1e-4
        T0 = max_correlation_grid(r0, mu).value
        fd = (max_correlation_grid(p.exact(h), mu).value - T0) / h
        assert fd >= correlation_slope(r0, r1, mu) - 1e-3
