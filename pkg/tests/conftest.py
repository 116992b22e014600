import numpy as np
import pytest

from rvasim.config import RunConfig
from rvasim.kinematics import default_chain
from rvasim.phantom import make_phantom_scenario


@pytest.fixture(scope="session")
def chain():
    return default_chain()


@pytest.fixture(scope="session")
def config():
    return RunConfig()


@pytest.fixture(scope="session")
def phantom():
    return make_phantom_scenario()


def random_q(chain, rng, margin=0.1):
    """Joint vector drawn inside the limits, away from the edges."""
    lo, hi = chain.limits
    span = hi - lo
    return lo + span * margin + rng.random(9) * span * (1 - 2 * margin)


def near_home_q(chain, rng, spread=0.3):
    """Random arm posture around home; the end-effector joints roam their full range."""
    lo, hi = chain.limits
    q = chain.q_home + rng.uniform(-spread, spread, 9)
    q[6:] = lo[6:] + rng.random(3) * (hi[6:] - lo[6:])
    return np.clip(q, lo, hi)


# one line per acceptance criterion, echoed again at the end of the run
VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
