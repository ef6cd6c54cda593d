import numpy as np
import pytest

from hybrid_ris.dictionary import build_dictionaries
from hybrid_ris.geometry import SystemGeometry


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def small_geom():
    return SystemGeometry(M=4, N=16, K=4)


@pytest.fixture(scope="session")
def small_dset(small_geom):
    return build_dictionaries(small_geom, n_angles=16, n_rings=2)


@pytest.fixture(scope="session")
def desk_geom():
    return SystemGeometry(M=8, N=32, K=4)


@pytest.fixture(scope="session")
def desk_dset(desk_geom):
    return build_dictionaries(desk_geom, n_angles=64, n_rings=1)


# one (number, line) entry per acceptance criterion, printed after the run
ACCEPTANCE: list[tuple[int, str]] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
