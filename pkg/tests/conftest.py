import numpy as np
import pytest

from msno.field import kle_eigendecomposition, sample_kle_field
from msno.grid import build_grid


@pytest.fixture(scope="session")
def grid5():
    return build_grid(5, 101)


@pytest.fixture(scope="session")
def small_grid():
    return build_grid(3, 31)


@pytest.fixture(scope="session")
def kle():
    return kle_eigendecomposition()


@pytest.fixture(scope="session")
def kappa5(grid5, kle):
    return sample_kle_field(kle, 7, grid5).values


@pytest.fixture(scope="session")
def kappa_small(small_grid, kle):
    return sample_kle_field(kle, 3, small_grid).values


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture(scope="session")
def verdict():
    """Record one pass/fail line per acceptance criterion; printed in the summary."""

    def record(number: int, ok: bool, detail: str) -> bool:
        _ACCEPTANCE[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])
