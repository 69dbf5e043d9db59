import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from aggre.kg_store import KnowledgeGraph, build_context_index  # noqa: E402

ACCEPTANCE_RESULTS = []


@pytest.fixture
def acceptance():
    """Record a one-line verdict per acceptance criterion."""

    def record(criterion, passed, detail=""):
        ACCEPTANCE_RESULTS.append((criterion, passed, detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        verdict = {True: "PASS", False: "FAIL", None: "SKIP"}[passed]
        terminalreporter.write_line(f"{verdict}  {criterion}  {detail}")


@pytest.fixture
def toy_kg():
    return KnowledgeGraph.from_labeled([("A", "r1", "B"), ("B", "r2", "C"), ("A", "r1", "C")])


@pytest.fixture
def toy_ctx(toy_kg):
    return build_context_index(toy_kg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
