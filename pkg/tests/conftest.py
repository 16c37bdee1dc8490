import numpy as np
import pytest

from radardogm.grid import DogmFrame, GridSpec, Pose


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = []
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            if "test_acceptance" in rep.nodeid and rep.when == "call":
                rows.append((rep.nodeid.split("::")[-1], status == "passed"))
    if rows:
        terminalreporter.section("acceptance criteria")
        for name, ok in sorted(rows):
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")


@pytest.fixture
def small_spec() -> GridSpec:
    return GridSpec.centered(40, 40, 0.2)


@pytest.fixture
def origin_pose() -> Pose:
    return Pose(0.0, 0.0, 0.0)


@pytest.fixture
def unknown_frame(small_spec, origin_pose) -> DogmFrame:
    return DogmFrame.initial(small_spec, origin_pose)


def random_beliefs(rng: np.random.Generator, shape) -> np.ndarray:
    from radardogm.grid import normalize_beliefs

    return normalize_beliefs(rng.dirichlet(np.ones(4), size=shape))
