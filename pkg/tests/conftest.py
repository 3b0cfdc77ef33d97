import numpy as np
import pytest

from wavekg.fields import build_initial_state
from wavekg.grid import make_grid
from wavekg.propagate import run
from wavekg.verify import DEFAULT_COUPLINGS, default_data


@pytest.fixture(scope="session")
def coupled_run():
    """Default small-data coupled run on 128^2, L = 32, recorded every 2.5."""
    g = make_grid(128, 32.0)
    s0 = build_initial_state(default_data(1e-3), g, DEFAULT_COUPLINGS)
    snaps = {}

    def keep(state):
        snaps[state.t] = state

    run(s0, 0.25, 20.0, record_every=2.5, on_record=keep)
    return snaps


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
