import numpy as np
import pytest
from scipy.optimize import linprog

from mmflow.measures import DiscreteMeasure, center


def random_discrete(rng, n, d, centered=True, scale=1.0):
    w = rng.dirichlet(np.ones(n))
    m = DiscreteMeasure(scale * rng.normal(size=(n, d)), w)
    return center(m) if centered else m


def full_dimensional(rng, n, d):
    """Centered measure whose atoms are not on a hyperplane."""
    while True:
        m = random_discrete(rng, n, d)
        y = m.atoms
        cov = (y * m.weights[:, None]).T @ y
        if np.linalg.eigvalsh(cov)[0] > 1e-3:
            return m


def linprog_correlation(rho, mu):
    """Reference T(rho, mu) from scipy's HiGHS solver."""
    n, m = len(rho), len(mu)
    G = rho.atoms @ mu.atoms.T
    A = np.zeros((n + m, n * m))
    for i in range(n):
        A[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        A[n + j, j::m] = 1.0
    res = linprog(-G.ravel(), A_eq=A, b_eq=np.r_[rho.weights, mu.weights],
                  bounds=(0, None), method="highs")
    assert res.status == 0
    return -res.fun


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def two_atoms():
    return DiscreteMeasure([-1.0, 1.0], [0.5, 0.5])


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
