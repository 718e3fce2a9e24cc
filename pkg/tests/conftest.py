import numpy as np
import pytest

ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(ok, detail)``; asserts ``ok``."""
    name = request.node.name

    def record(ok, detail):
        status = "PASS" if ok else "FAIL"
        line = f"[{status}] {name}: {detail}"
        request.config.stash[ACCEPTANCE_KEY].append(line)
        print(line)
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
