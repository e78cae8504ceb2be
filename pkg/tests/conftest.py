import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from homoglab.fields import CoefficientField
from homoglab.lattice import TorusGrid

settings.register_profile(
    "homoglab",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("homoglab")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_scalar_medium(grid: TorusGrid, lam: float, rng) -> CoefficientField:
    return CoefficientField(grid, rng.uniform(lam, 1.0, size=grid.shape), lam)


def random_matrix_medium(grid: TorusGrid, lam: float, rng, symmetric: bool = True) -> CoefficientField:
    """Per-cell matrices with symmetric part >= lam and operator norm <= 1."""
    d = grid.d
    n = grid.ncells
    out = np.empty((n, d, d))
    for c in range(n):
        while True:
            q, _ = np.linalg.qr(rng.standard_normal((d, d)))
            eig = rng.uniform(lam + 0.05, 0.95, size=d)
            m = q @ np.diag(eig) @ q.T
            if not symmetric:
                s = rng.uniform(-0.1, 0.1)
                skew = np.zeros((d, d))
                skew[0, 1], skew[1, 0] = s, -s
                m = m + skew
            if np.linalg.norm(m, 2) <= 1 and np.linalg.eigvalsh(0.5 * (m + m.T)).min() >= lam:
                out[c] = m
                break
    values = np.moveaxis(out, 0, -1).reshape((d, d) + grid.shape)
    return CoefficientField(grid, values, lam)


# -- acceptance bookkeeping ------------------------------------------------

ACCEPTANCE_LINES: list = []


@pytest.fixture
def criterion():
    """Record one acceptance verdict, print it, and fail the test when it does not hold."""

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES, key=lambda t: t[0]):
            terminalreporter.write_line(line)
