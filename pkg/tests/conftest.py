import numpy as np
import pytest
from hypothesis import settings

from it2mpc import bench, synth

settings.register_profile("suite", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("suite")

ACCEPTANCE_LINES = []


def record(line):
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def cstr():
    return bench.load_config(bench.bundled_config())


@pytest.fixture(scope="session")
def cstr_step0(cstr):
    hist = synth.HistoryWindow.constant(cstr.x0, cstr.synth.h, cstr.synth.j, cstr.plant.w)
    sol = synth.solve_step(cstr.plant, cstr.synth, hist)
    return hist, sol


def random_spd(rng, n, lo=0.1):
    a = rng.standard_normal((n, n))
    return a @ a.T + lo * np.eye(n)
