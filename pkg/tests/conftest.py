import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def centered(x):
    x = np.asarray(x, dtype=float)
    return x - x.mean(axis=0)


def low_rank(rng, n, p, rank, noise=0.0):
    signal = rng.standard_normal((n, rank)) @ rng.standard_normal((rank, p))
    return signal + noise * rng.standard_normal((n, p))


def knock_out(rng, x, rate):
    """Copy of ``x`` with ``rate`` of its cells set to NaN, no empty column."""
    x = np.array(x, dtype=float)
    n, p = x.shape
    while True:
        hide = rng.random((n, p)) < rate
        if (~hide).any(axis=0).all():
            break
    x[hide] = np.nan
    return x


# One line per acceptance criterion, printed after the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
