import numpy as np
import pytest
from hypothesis import settings

from prandtl3d.grid import GridSpec
from prandtl3d.state import canonical_profile, make_state

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def grid16():
    return GridSpec(16, 16, 65).build()


@pytest.fixture(scope="session")
def canonical(grid16):
    u, v = canonical_profile(grid16, pert=0.1, vpert=0.1)
    return make_state(grid16, u, v)


def smooth_random_field(grid, rng, modes=3, amp=0.1):
    """Band-limited perturbation times a decaying profile in z."""
    f = np.zeros(grid.shape)
    for _ in range(modes):
        k, l = rng.integers(0, 4, size=2)
        ph = rng.uniform(0, 2 * np.pi)
        c = rng.normal()
        f += c * np.cos(k * grid.X + l * grid.Y + ph)
    return amp * f * grid.Z * np.exp(-grid.Z)


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
