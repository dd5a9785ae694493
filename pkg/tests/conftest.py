import itertools

import numpy as np
import pytest
from hypothesis import settings

from chainrec.kernels import BACKENDS
from chainrec.systems import make_system

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@pytest.fixture(params=sorted(BACKENDS))
def backend(request):
    return request.param


@pytest.fixture(scope="session")
def cat():
    return make_system("cat_map", {})


@pytest.fixture(scope="session")
def ident2():
    return make_system("identity", {"d": 2})


@pytest.fixture(scope="session")
def morse():
    return make_system("morse_gradient_t1", {})


def torus_dist_matrix(a, b):
    """Brute-force flat-torus distance matrix."""
    diff = np.abs(a[:, None, :] - b[None, :, :]) % 1.0
    diff = np.minimum(diff, 1.0 - diff)
    return np.sqrt((diff ** 2).sum(-1))


def brute_hausdorff(a, b):
    m = torus_dist_matrix(np.asarray(a, float), np.asarray(b, float))
    return max(m.min(axis=1).max(), m.min(axis=0).max())


def brute_sccs(n, edges):
    """SCCs from the transitive closure (Floyd-Warshall style boolean closure)."""
    reach = np.eye(n, dtype=bool)
    for u, v in edges:
        reach[u, v] = True
    for k in range(n):
        reach |= reach[:, k:k + 1] & reach[k:k + 1, :]
    mutual = reach & reach.T
    comps = {frozenset(np.flatnonzero(mutual[i]).tolist()) for i in range(n)}
    return comps, reach


def lattice(m, d):
    return np.array(list(itertools.product(np.linspace(0, 1, m, endpoint=False), repeat=d)))


# criterion number -> (passed, description), filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, text = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {text}")
