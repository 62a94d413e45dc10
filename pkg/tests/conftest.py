import sys
import warnings
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ocpbandit.environments import EnvSpec
from ocpbandit.grid_loss import LossParams, ThresholdGrid
from ocpbandit.harness import run
from ocpbandit.learners import HyperParams


@pytest.fixture(scope="session", autouse=True)
def warm_jit():
    """Compile (or load cached) numba kernels once so timed tests measure steady state."""
    grid = ThresholdGrid.uniform(5)
    params = LossParams.for_horizon(0.1, 40, 20)
    hyper = HyperParams(eta=0.1, gamma=0.2, beta=0.05)
    for variant in ("bandit", "unlock", "unlock-plus"):
        for kind in ("iid", "adaptive"):
            run(EnvSpec(kind), variant, grid, params, hyper, 20, seed=0)
    run(EnvSpec("iid"), "unlock", ThresholdGrid.uniform(200), params, hyper, 5, seed=0)


@pytest.fixture
def grid4():
    return ThresholdGrid.uniform(4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, label): acceptance criterion reported in the summary")
    config._acceptance = []


@pytest.fixture
def acceptance(request):
    """Recorder for acceptance criteria; one line per criterion lands in the terminal summary."""
    n, label = request.node.get_closest_marker("criterion").args
    seen = []

    def record(ok, detail=""):
        line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {label}  {detail}".rstrip()
        seen.append(line)
        request.config._acceptance.append((n, line))
        print(line)
        return ok

    yield record
    if not seen:
        request.config._acceptance.append((n, f"criterion {n:>2} FAIL  {label}  (error before a verdict)"))


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_acceptance", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
