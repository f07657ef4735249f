import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ncenter.model import Disk, n_center  # noqa: E402


@pytest.fixture
def two_center():
    return n_center([[-1.0, 0.0], [1.0, 0.0]], 1.0, 1, 1.0, Disk((0.0, 0.0), 4.0))


@pytest.fixture
def triangle():
    pts = [[math.cos(2 * math.pi * k / 3 + math.pi / 2), math.sin(2 * math.pi * k / 3 + math.pi / 2)] for k in range(3)]
    return n_center(pts, 1.0, 1, 1.0, Disk((0.0, 0.0), 4.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """record(n, ok, detail, elapsed, budget) stores one PASS/FAIL line; the runtime budget is part of the verdict."""
    n0 = int(request.node.name.split("_")[2])
    request.config.stash.setdefault(ACCEPTANCE_KEY, {}).setdefault(
        n0, f"CRITERION {n0:>2}: FAIL  (did not report; see the test traceback)")

    def record(n: int, ok: bool, detail: str, elapsed: float, budget: float) -> bool:
        ok = bool(ok) and elapsed <= budget
        line = f"CRITERION {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}  [{elapsed:.1f} s, budget {budget:g} s]"
        request.config.stash.setdefault(ACCEPTANCE_KEY, {})[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, None)
    if lines is None:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])
