import json
import math

import numpy as np
import pytest

from conftest import full_dimensional, random_discrete
from mmflow.convex import MaxAffineConvex, evaluate
from mmflow.measures import (DiscreteMeasure, GridDensity, MeasureError,
                             barycenter, c_mu, c_mu_search, center,
                             first_moment, hyperplane_check, load_measure,
                             measure_to_csv, measure_to_dict, restrict_renormalize,
                             save_measure, second_moment, truncate_with_atom,
                             weighted_median)


def test_load_two_atoms():
    m = load_measure('{"atoms":[[-1],[1]],"weights":[0.5,0.5]}')
    assert m.dim == 1 and len(m) == 2
    np.testing.assert_array_equal(m.weights, [0.5, 0.5])


def test_duplicate_atoms_merged():
    m = load_measure({"atoms": [[0, 0], [0, 0]], "weights": [0.5, 0.5]})
    assert len(m) == 1
    np.testing.assert_array_equal(m.atoms, [[0.0, 0.0]])
    assert m.weights[0] == 1.0


def test_mass_error_message():
    with pytest.raises(MeasureError, match="mass 0.9 ≠ 1"):
        load_measure({"atoms": [[-1], [1]], "weights": [0.5, 0.4]})


def test_small_mass_defect_renormalized():
    m = DiscreteMeasure([0.0, 1.0], [0.5, 0.5 + 5e-7])
    assert abs(m.weights.sum() - 1.0) <= 1e-12


@pytest.mark.parametrize("bad", [
    {"atoms": [[0], [1]], "weights": [1.5, -0.5]},
    {"atoms": [[0], [1, 2]], "weights": [0.5, 0.5]},
    {"atoms": [[0, 1]], "weights": [1.0], "dim": 3},
    {"atoms": [], "weights": []},
    {"weights": [1.0]},
    {"type": "simplex", "atoms": [[0]], "weights": [1]},
])
def test_malformed_rejected(bad):
    with pytest.raises(MeasureError):
        load_measure(bad)


def test_bad_json_text():
    with pytest.raises(MeasureError):
        load_measure(b"{not json")


def test_round_trip_file(tmp_path, rng):
    mu = random_discrete(rng, 9, 2)
    path = tmp_path / "mu.json"
    save_measure(mu, path)
    assert load_measure(path) == mu
    rho = GridDensity.from_function(lambda x: np.exp(-x * x), -4, 4, 64)
    back = load_measure(json.dumps(measure_to_dict(rho)))
    np.testing.assert_array_equal(back.values, rho.values)


def test_csv_rows(two_atoms):
    lines = measure_to_csv(two_atoms).strip().split("\n")
    assert lines[0] == "x0,weight"
    assert lines[1:] == ["-1.0,0.5", "1.0,0.5"]


def test_containers_are_read_only(two_atoms):
    with pytest.raises(ValueError):
        two_atoms.weights[0] = 0.2


def test_barycenter_examples(two_atoms):
    assert barycenter(two_atoms)[0] == 0.0
    np.testing.assert_array_equal(barycenter(DiscreteMeasure([[2, 3]], [1])),
                                  [2.0, 3.0])
    assert barycenter(DiscreteMeasure([0.0, 4.0], [0.25, 0.75]))[0] == 3.0


def test_center_examples():
    c = center(DiscreteMeasure([[2.0, 3.0]], [1.0]))
    np.testing.assert_array_equal(c.atoms, [[0.0, 0.0]])
    c = center(DiscreteMeasure([0.0, 4.0], [0.25, 0.75]))
    np.testing.assert_array_equal(c.atoms[:, 0], [-3.0, 1.0])
    np.testing.assert_array_equal(c.weights, [0.25, 0.75])


def test_center_idempotent(rng):
    for d in (1, 2, 3):
        m = random_discrete(rng, 6, d, centered=False)
        c = center(m)
        assert np.max(np.abs(barycenter(c))) <= 1e-12
        assert center(c) == c


def test_moments(two_atoms):
    assert first_moment(two_atoms) == 1.0 and second_moment(two_atoms) == 1.0
    d0 = DiscreteMeasure([0.0], [1.0])
    assert first_moment(d0) == 0.0 and second_moment(d0) == 0.0
    u = GridDensity.uniform(-2, 2, 400)
    assert abs(first_moment(u) - 1.0) <= 1e-12
    assert abs(second_moment(u) - 4.0 / 3.0) <= 1e-12


def test_grid_moments_2d():
    g = GridDensity([-1, -1], [0.5, 0.5], np.full((4, 4), 0.25))
    # uniform on the square: E|x|^2 = 2/3
    assert abs(second_moment(g) - 2.0 / 3.0) <= 1e-12
    np.testing.assert_allclose(barycenter(g), [0.0, 0.0], atol=1e-15)


def test_hyperplane_examples():
    line = DiscreteMeasure([[-1, 0], [0.5, 0], [2, 0]], [0.2, 0.3, 0.5])
    rep = hyperplane_check(line)
    assert rep.degenerate
    np.testing.assert_allclose(rep.normal, [0.0, 1.0], atol=1e-12)
    assert abs(rep.offset) <= 1e-12
    corners = DiscreteMeasure([[1, 1], [1, -1], [-1, 1], [-1, -1]], [0.25] * 4)
    assert not hyperplane_check(corners).degenerate
    assert hyperplane_check(DiscreteMeasure([3.0], [1.0])).degenerate


def test_hyperplane_normal_fits_atoms(rng):
    e = np.array([0.6, 0.8])
    t = rng.normal(size=5)
    atoms = np.outer(t, [-0.8, 0.6]) + 0.7 * e
    rep = hyperplane_check(DiscreteMeasure(atoms, np.full(5, 0.2)))
    assert rep.degenerate
    assert np.max(np.abs(atoms @ rep.normal - rep.offset)) <= 1e-10


def test_weighted_median_tie_rule():
    assert weighted_median([3.0, 1.0, 2.0, 4.0], [0.25] * 4) == 2.0
    assert weighted_median([1.0, 2.0], [0.5, 0.5]) == 1.0


def test_c_mu_examples(two_atoms):
    assert c_mu(two_atoms) == 0.5
    corners = DiscreteMeasure([[1, 1], [1, -1], [-1, 1], [-1, -1]], [0.25] * 4)
    res = c_mu_search(corners)
    assert abs(res.value - math.sqrt(2) / 8) <= 1e-6
    assert res.certified
    # optimal directions are the diagonals
    assert abs(abs(res.direction[0]) - abs(res.direction[1])) <= 1e-3


def _brute_c_mu(mu, n=200000):
    theta = np.linspace(0, np.pi, n, endpoint=False)
    best = np.inf
    for chunk in np.array_split(theta, 50):
        e = np.stack([np.cos(chunk), np.sin(chunk)], 1)
        p = e @ mu.atoms.T
        for row in p:
            ell = weighted_median(row, mu.weights)
            best = min(best, float(mu.weights @ np.abs(row - ell)))
    return best / 4.0


def test_c_mu_against_dense_scan(rng):
    mu = full_dimensional(rng, 7, 2)
    val = c_mu(mu)
    ref = _brute_c_mu(mu, 20000)
    # dense scan is an upper bound; certified value is within 1e-6 below it
    assert val <= ref + 1e-12
    assert ref - val <= 1e-4


def test_c_mu_degenerate_is_zero():
    line = DiscreteMeasure([[-1, 2], [0.5, 2], [2, 2]], [0.2, 0.3, 0.5])
    assert c_mu(line) <= 1e-6


def test_c_mu_rotation_and_dilation(rng):
    for _ in range(5):
        mu = full_dimensional(rng, 6, 2)
        a = rng.uniform(0, 2 * np.pi)
        R = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        rot = DiscreteMeasure(mu.atoms @ R.T, mu.weights)
        assert abs(c_mu(rot) - c_mu(mu)) <= 1e-6
        assert abs(c_mu(mu.dilate(2.5)) - 2.5 * c_mu(mu)) <= 1e-6


def test_c_mu_high_dimension_is_flagged(rng):
    mu = full_dimensional(rng, 10, 3)
    res = c_mu_search(mu, seed=1)
    assert not res.certified and res.value > 0


def test_truncate_examples():
    mu = DiscreteMeasure([-1.0, 0.5], [0.5, 0.5])
    assert truncate_with_atom(mu, 2.0) is mu
    mu = DiscreteMeasure([-3.0, 1.0], [0.5, 0.5])
    t = truncate_with_atom(mu, 2.0)
    assert sorted(zip(t.atoms[:, 0], t.weights)) == [(-3.0, 0.5), (1.0, 0.5)]
    mu = DiscreteMeasure([-4.0, -2.0, 2.0, 4.0], [0.25] * 4)
    t = truncate_with_atom(mu, 3.0)
    assert sorted(zip(t.atoms[:, 0], t.weights)) == [
        (-2.0, 0.25), (0.0, 0.5), (2.0, 0.25)]


def test_truncate_preserves_mass_and_barycenter(rng):
    for _ in range(50):
        d = int(rng.integers(1, 4))
        mu = random_discrete(rng, int(rng.integers(2, 20)), d, centered=False)
        n = float(rng.uniform(0.2, 2.5))
        t = truncate_with_atom(mu, n)
        assert abs(t.weights.sum() - 1) <= 1e-12
        assert np.max(np.abs(barycenter(t) - barycenter(mu))) <= 1e-12


def test_truncation_jensen(rng):
    for _ in range(50):
        d = int(rng.integers(1, 3))
        mu = random_discrete(rng, 12, d, centered=False)
        t = truncate_with_atom(mu, float(rng.uniform(0.3, 2.0)))
        u = MaxAffineConvex(rng.normal(size=(5, d)), rng.normal(size=5))
        lhs = t.weights @ evaluate(u, t.atoms)[0]
        rhs = mu.weights @ evaluate(u, mu.atoms)[0]
        assert lhs <= rhs + 1e-10


def test_restrict_examples():
    u = GridDensity.uniform(-1, 1, 100)
    r = restrict_renormalize(u, 1.0)
    np.testing.assert_allclose(r.values, u.values, rtol=1e-15)
    r = restrict_renormalize(GridDensity.uniform(-2, 2, 400), 1.0)
    inside = np.abs(r.axis_centers(0)) <= 1.0
    np.testing.assert_allclose(r.values[inside], 0.5, rtol=1e-12)
    assert np.all(r.values[~inside] == 0)
    with pytest.raises(MeasureError):
        restrict_renormalize(GridDensity.uniform(1, 3, 10), 0.5)


def test_grid_validation():
    with pytest.raises(MeasureError):
        GridDensity([0], [0.1], np.full(10, 0.5))
    with pytest.raises(MeasureError):
        GridDensity([0], [-0.1], np.full(10, 1.0))
