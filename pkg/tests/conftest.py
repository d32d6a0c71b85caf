import numpy as np
import pytest

from gminfer.nets import GanTrainConfig
from gminfer.runs import train_stage
from gminfer.targets import ring8

PINNED_SEED = 11


def fd_grad(f, x, h=1e-5):
    """Central finite differences of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    return float(np.linalg.norm(np.asarray(a) - b) / max(np.linalg.norm(b), np.linalg.norm(a), 1e-12))


@pytest.fixture(scope="session")
def ring8_gan():
    """Early-stopped toy GAN on ring8 at the pinned seed: (gen, disc, history)."""
    return train_stage(ring8(), GanTrainConfig(), PINNED_SEED)


# one "CRITERION n: PASS/FAIL" line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
