import warnings

import numpy as np
import pytest

from smbounds.estimate import ClampWarning
from smbounds.identify import example1_dgp
from smbounds.simlab import draw_sample


@pytest.fixture(autouse=True)
def _quiet_clamp():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ClampWarning)
        yield


@pytest.fixture(scope="session")
def ex1():
    return example1_dgp()


@pytest.fixture(scope="session")
def big_sample(ex1):
    return draw_sample(ex1, 100_000, seed=20240501)


@pytest.fixture(scope="session")
def mid_sample(ex1):
    return draw_sample(ex1, 5_000, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record a criterion outcome; the summary prints one line per criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(num, passed, detail):
        line = f"criterion {num:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append((num, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
