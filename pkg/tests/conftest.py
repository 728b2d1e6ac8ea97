import itertools

import numpy as np
import pytest

from hdcpd.core import Dataset, IntegerInterval
from hdcpd.dp import LossCache, segment_loss


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_dataset(rng, n, p, scale=1.0):
    X = rng.standard_normal((n, p))
    y = X @ rng.uniform(-2, 2, p) + scale * rng.standard_normal(n)
    return Dataset(X, y)


def enumerate_partitions(n):
    """Every bound list 0 < ... < n of a partition of (0, n]."""
    for bits in itertools.product((0, 1), repeat=n - 1):
        yield [0] + [i + 1 for i, b in enumerate(bits) if b] + [n]


def exhaustive_partition(data, lasso, gamma):
    """Brute-force minimum of sum L(I) + gamma |P| over all 2^(n-1) partitions."""
    cache = LossCache()
    best = None
    for bounds in enumerate_partitions(data.n):
        val = sum(segment_loss(data, IntegerInterval(a, b), lasso, cache)
                  for a, b in zip(bounds, bounds[1:]))
        val += gamma * (len(bounds) - 1)
        if best is None or val < best[0]:
            best = (val, bounds)
    return best


# acceptance bookkeeping: one line per criterion, echoed in the terminal summary
_ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance():
    def record(tag, ok, detail):
        line = f"[{tag}] {'PASS' if ok else 'FAIL'}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
