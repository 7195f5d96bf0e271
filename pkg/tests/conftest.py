import numpy as np
import pytest

from stfusion import StudentT

ACCEPTANCE_LINES: list[str] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "analytic: hand-evaluated or oracle-backed example")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_spd(rng: np.random.Generator, n: int, lo: float = 0.2, hi: float = 5.0) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (q * rng.uniform(lo, hi, n)) @ q.T


def random_t(rng: np.random.Generator, n: int, dof=None) -> StudentT:
    nu = rng.uniform(2.5, 10.0) if dof is None else dof
    return StudentT(rng.normal(0, 2, n), random_spd(rng, n), nu)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
