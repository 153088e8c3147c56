import numpy as np
import pytest

from omic.bases import CommunityAssignment
from omic.numerics import SparseObservations


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_assignment(rng, size, max_groups=4):
    num = int(rng.integers(1, min(max_groups, size) + 1))
    labels = np.concatenate([np.arange(num), rng.integers(0, num, size - num)])
    return CommunityAssignment(rng.permutation(labels))


def random_observations(rng, R, frac):
    mask = rng.random(R.shape) < frac
    return SparseObservations.from_dense(R, mask)


def low_rank(rng, m, n, r, scale=1.0):
    return scale * rng.standard_normal((m, r)) @ rng.standard_normal((r, n))


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(number, status, detail):
        if isinstance(status, bool):
            status = "PASS" if status else "FAIL"
        line = f"criterion {number}: {status} | {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return status

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
