import numpy as np
import pytest


def pytest_addoption(parser):
    parser.addoption("--extended", action="store_true", default=False, help="run long extended checks")


def pytest_configure(config):
    config.addinivalue_line("markers", "extended: long-running check, skipped unless --extended is given")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--extended"):
        return
    skip = pytest.mark.skip(reason="extended check; pass --extended to run")
    for item in items:
        if "extended" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(criterion: str, passed: bool, detail: str):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
        lines.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
