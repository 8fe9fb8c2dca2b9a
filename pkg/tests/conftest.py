import numpy as np
import pytest

from riverlcp.basin import load_basin


@pytest.fixture(scope="session")
def baseline():
    return load_basin("three_node_baseline")


@pytest.fixture(scope="session")
def duck_river():
    return load_basin("duck_river")


def random_pure_lcp(rng: np.random.Generator, n: int):
    """A pure LCP with a unique solution (M is positive definite)."""
    A = rng.normal(size=(n, n))
    M = A @ A.T + n * np.eye(n)
    q = rng.normal(scale=2.0, size=n)
    return M, q


def enumerate_lcp_solutions(M: np.ndarray, q: np.ndarray, tol: float = 1e-9):
    """All solutions of a small pure LCP by complementary-basis enumeration."""
    n = len(q)
    found = []
    for mask in range(1 << n):
        basic = [i for i in range(n) if mask >> i & 1]
        z = np.zeros(n)
        if basic:
            sub = M[np.ix_(basic, basic)]
            if abs(np.linalg.det(sub)) < 1e-12:
                continue
            z[basic] = np.linalg.solve(sub, -q[basic])
        w = M @ z + q
        if np.all(z >= -tol) and np.all(w >= -tol):
            if not any(np.allclose(z, other, atol=1e-7) for other in found):
                found.append(np.maximum(z, 0.0))
    return found
