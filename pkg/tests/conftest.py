import numpy as np
import pytest

from strainedfilm import Anisotropy, FlowParams, LameParams, Profile

_ACCEPTANCE_LINES = []


def record_acceptance(line: str) -> None:
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def wavy_curve():
    b = 2 * np.pi
    return Profile.from_function(lambda x: 1.0 + 0.2 * np.cos(x) + 0.1 * np.sin(2 * x + 0.3), 64, b, 1)


@pytest.fixture
def wavy_surface():
    b = 2 * np.pi
    return Profile.from_function(
        lambda x, y: 1.0 + 0.2 * np.cos(x) * np.sin(y) + 0.1 * np.sin(2 * x + y), 32, b, 2
    )


@pytest.fixture
def lame():
    return LameParams(1.0, 1.0, 0.7)


@pytest.fixture
def iso2():
    return Anisotropy.isotropic(2)


@pytest.fixture
def flow1():
    return FlowParams(epsilon=0.05)


def band_limited(X, coeffs, modes):
    """Sum of c * cos(k . x + c) over given integer wave vectors."""
    grids = X if isinstance(X, tuple) else (X,)
    out = np.zeros_like(grids[0])
    for c, k in zip(coeffs, modes):
        out = out + c * np.cos(sum(kk * g for kk, g in zip(k, grids)) + 0.7 * c)
    return out
