import os

import pytest

from switchband import harness
from switchband.model import PenaltySpec, constant_signal

THREADS = min(8, os.cpu_count() or 1)
SCALING_GRID = [1e-3, 1e-4, 1e-5, 1e-6]


@pytest.fixture(scope="session")
def constant_signal_scaling():
    """Constant-signal model on [0, 50] at dt = 1e-3 with 10^3 shared paths per lambda."""
    model = constant_signal(horizon=50.0)
    return harness.scaling_study(model, PenaltySpec.quadratic(1e-4, 1.0), SCALING_GRID, n_paths=1000, seed=2024,
                                 dt=1e-3, threads=THREADS)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
