import re

import numpy as np
import pytest

# criterion number -> (passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def criterion(request):
    """Record one acceptance line; a test that dies before recording counts as a failure."""
    n = int(re.match(r"test_criterion_(\d+)", request.node.name).group(1))

    def record(ok, detail):
        ACCEPTANCE[n] = (bool(ok), detail)
        return ok

    yield record
    ACCEPTANCE.setdefault(n, (False, "did not complete"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
