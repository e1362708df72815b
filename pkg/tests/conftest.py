import sys
from pathlib import Path

import numpy as np
import pytest

from velplan3d.ggcon import AnalyticGG
from velplan3d.track3d import Track3D

sys.path.insert(0, str(Path(__file__).parent))

# verdict lines collected by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def make_track(kappa, length, ds=1.0, phi=None, mu=None, width=8.0, v_off=60.0, closed=False):
    """Track from callables of progress: curvature, bank and pitch (radians)."""
    s = np.linspace(0.0, length, int(round(length / ds)) + 1)
    k = np.asarray(kappa(s), dtype=float) * np.ones_like(s)
    theta = np.concatenate(([0.0], np.cumsum(0.5 * np.diff(s) * (k[1:] + k[:-1]))))
    ph = np.zeros_like(s) if phi is None else np.asarray(phi(s), dtype=float) * np.ones_like(s)
    m = np.zeros_like(s) if mu is None else np.asarray(mu(s), dtype=float) * np.ones_like(s)
    step = np.diff(s)
    x = np.concatenate(([0.0], np.cumsum(step * np.cos(theta[:-1]) * np.cos(m[:-1]))))
    y = np.concatenate(([0.0], np.cumsum(step * np.sin(theta[:-1]) * np.cos(m[:-1]))))
    z = np.concatenate(([0.0], np.cumsum(-step * np.sin(m[:-1]))))
    w = np.full_like(s, width)
    return Track3D(s, x, y, z, ph, m, theta, w, w, np.full_like(s, v_off), closed=closed)


def peak(center, half_width, height):
    """Triangular curvature bump."""
    return lambda s: height * np.maximum(0.0, 1.0 - np.abs(s - center) / half_width)


@pytest.fixture
def plain_gg():
    """Velocity-independent, load-independent limits with no engine cap."""
    return AnalyticGG(load_scaling=False, power=float("inf"), c_drag=0.0, ax_eng_0=float("inf"))


@pytest.fixture(scope="session")
def reduced_grip_logs():
    """Online and offline closed-loop runs of the bundled reduced-grip scenario."""
    from velplan3d.sim import bundled_scenario, load_scenario, run_scenario

    path = bundled_scenario("reduced_grip")
    return {ref: run_scenario(load_scenario(path, ref)) for ref in ("online", "offline")}


@pytest.fixture(scope="session")
def obstacle_log():
    from velplan3d.sim import bundled_scenario, load_scenario, run_scenario

    return run_scenario(load_scenario(bundled_scenario("obstacle")))
