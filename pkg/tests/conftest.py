import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from progs import corpus  # noqa: E402

TWO_LOOPS = "int i=0;\nint j=0;\nwhile (i<10)\n    i++;\nwhile (j<10)\n    j++;\n"


@pytest.fixture(scope="session")
def programs() -> dict[str, str]:
    return corpus()


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
