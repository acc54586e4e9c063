from pathlib import Path

import numpy as np
import pytest

from sotl.datamodel import GroupData, MultiSourceProblem
from sotl.stacking import build_stacked

REPO = Path(__file__).resolve().parents[1]
CRIME_DATA = REPO / "data" / "communities.data"


def random_problem(rng, n_groups=2, p=5, n_range=(3, 12), target_index=0):
    groups = []
    for _ in range(n_groups):
        n = int(rng.integers(*n_range))
        groups.append(GroupData(rng.standard_normal((n, p)), rng.standard_normal(n)))
    return MultiSourceProblem(tuple(groups), target_index)


def random_system(rng, **kw):
    return build_stacked(random_problem(rng, **kw))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def tiny_problem():
    # Target: X=[2], y=[4]; auxiliary: X=[3], y=[6].
    return MultiSourceProblem((GroupData([[2.0]], [4.0]), GroupData([[3.0]], [6.0])), 0)


@pytest.fixture(scope="session")
def crime_path():
    if not CRIME_DATA.exists():
        pytest.skip("data/communities.data not present")
    return CRIME_DATA


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def acceptance_report(request):
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    lines = request.config.acceptance_lines

    def record(number, passed, detail):
        lines.append(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
