import numpy as np
import pytest

from capprov.synth import SyntheticSpec, generate_trace


@pytest.fixture(scope="session")
def diurnal_trace():
    """Seven days of one-minute samples, 5:1 peak to trough, 5% noise."""
    return generate_trace(SyntheticSpec(), seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
