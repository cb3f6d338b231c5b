import math
import sys

import numpy as np
import pytest

from rhheat.flow import FlowParams, run_flow
from rhheat.geometry import CouplingSchedule, ManifoldConfig, fourier_profile


def coupled_config(grid=128, alpha0=0.1, **kw):
    L = 2 * math.pi
    return ManifoldConfig(
        "COUPLED_CIRCLE",
        grid=grid,
        metric0=tuple(fourier_profile(grid, L, {"mean": 1.0, "cos": [0.2]})),
        perturbation0=tuple(fourier_profile(grid, L, {"sin": [0.3]})),
        winding=1,
        coupling=CouplingSchedule("CONSTANT", alpha0),
        **kw,
    )


@pytest.fixture(scope="session")
def sphere_cfg():
    return ManifoldConfig("ROUND_SPHERE", grid=512)


@pytest.fixture(scope="session")
def sphere_traj(sphere_cfg):
    return run_flow(sphere_cfg, FlowParams(0.2, 0.01))


@pytest.fixture(scope="session")
def torus_cfg():
    return ManifoldConfig("TORUS_LINEAR", grid=256, winding=1)


@pytest.fixture(scope="session")
def torus_traj(torus_cfg):
    return run_flow(torus_cfg, FlowParams(0.2, 0.01))


@pytest.fixture(scope="session")
def coupled_traj():
    return run_flow(coupled_config(), FlowParams(0.2, 0.001))


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def pytest_terminal_summary(terminalreporter):
    acc = sys.modules.get("test_acceptance")
    if acc is None or not acc.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(acc.RESULTS):
        terminalreporter.write_line(acc.RESULTS[num])
