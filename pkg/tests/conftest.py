from __future__ import annotations

import numpy as np
import pytest
from hypothesis import strategies as st

from schedlab.model import Request


def make_workload(outputs, s=0, low=None, high=None):
    """Requests with ids 0..n-1 sharing one interval (defaults to the output range)."""
    outputs = [int(o) for o in outputs]
    lo = min(outputs) if low is None else low
    hi = max(outputs) if high is None else high
    return [Request(i, s, o, lo, hi) for i, o in enumerate(outputs)]


class FirstChoiceRNG:
    """Stand-in generator that never shuffles: ties fall back to index order."""

    def permutation(self, n):
        return np.arange(n)

    def choice(self, a, size=None, replace=True):
        return np.asarray(a)[:size]


@st.composite
def small_instances(draw, max_n=8, max_len=6, max_s=2):
    """A workload plus a memory size that can always hold the longest request."""
    n = draw(st.integers(1, max_n))
    outputs = draw(st.lists(st.integers(1, max_len), min_size=n, max_size=n))
    s = draw(st.integers(0, max_s))
    lo = draw(st.integers(1, min(outputs)))
    hi = draw(st.integers(max(outputs), max_len + 2))
    M = draw(st.integers(s + hi, s + hi + 3 * max_len))
    return make_workload(outputs, s, lo, hi), M, s


@pytest.fixture
def example1():
    return make_workload([1] * 5, s=1, low=1, high=4), 10


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results, key=lambda k: int(k[2:])):
        terminalreporter.write_line(results[key])
