import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_ACCEPTANCE_KEY = pytest.StashKey[list]()


class AcceptanceLog:
    def __init__(self, lines):
        self.lines = lines

    def record(self, number, title, ok, detail=""):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        self.lines.append((number, line))
        print(line)
        return ok

    def skip(self, number, title, reason):
        line = f"criterion {number:>2}: SKIP  {title}  [{reason}]"
        self.lines.append((number, line))
        print(line)
        pytest.skip(reason)


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture(scope="session")
def acceptance(request):
    return AcceptanceLog(request.config.stash[_ACCEPTANCE_KEY])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda x: x[0]):
            terminalreporter.write_line(line)
