import numpy as np
import pytest

from backward_rd.spectral import GridSpec, transform


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def grid1():
    return GridSpec(d=1, n_per_axis=32)


@pytest.fixture
def grid2():
    return GridSpec(d=2, n_per_axis=16, ell=3.0)


def random_field(grid, rng, decay=0.0):
    v = transform(rng.standard_normal(grid.shape), grid)
    if decay:
        v = type(v)(grid, v.coeffs * np.exp(-decay * grid.eigenvalues))
    return v


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
