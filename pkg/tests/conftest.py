import re

import pytest

ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """``criterion(n, passed, detail)`` records and asserts one acceptance line."""

    def report(number, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  criterion {number}: {detail}"
        request.config.stash[ACCEPTANCE].append((number, line))
        print(line)
        assert passed, line

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines, key=lambda item: item[0]):
        terminalreporter.write_line(line)


def pytest_collection_modifyitems(config, items):
    # run the acceptance suite last so its summary follows the unit tests
    items.sort(key=lambda item: bool(re.search(r"test_acceptance", item.nodeid)))
