import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

sys.path.insert(0, os.path.dirname(__file__))

from effectgate.dataset import Dataset, VariableSpec  # noqa: E402
from effectgate.graph import CausalGraph  # noqa: E402

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# filled by tests/test_acceptance.py; printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line[1])


@st.composite
def dags(draw, min_nodes=2, max_nodes=5):
    n = draw(st.integers(min_nodes, max_nodes))
    names = [f"V{i}" for i in range(n)]
    order = draw(st.permutations(names))
    edges = []
    for i, j in itertools_pairs(n):
        if draw(st.booleans()):
            edges.append((order[i], order[j]))
    return CausalGraph(names, edges)


def itertools_pairs(n):
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def random_dags(count, max_nodes, seed, edge_prob=0.5, min_nodes=2):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        n = int(rng.integers(min_nodes, max_nodes + 1))
        names = [f"V{i}" for i in range(n)]
        perm = rng.permutation(n)
        edges = [
            (names[perm[i]], names[perm[j]]) for i in range(n) for j in range(i + 1, n) if rng.random() < edge_prob
        ]
        out.append(CausalGraph(names, edges))
    return out


@pytest.fixture
def binary_ty():
    """Four rows: treated outcomes (1, 1), control outcomes (0, 1)."""
    specs = [VariableSpec("T", "binary", "treatment"), VariableSpec("Y", "binary", "outcome")]
    return Dataset(specs, [[1, 1], [1, 1], [0, 0], [0, 1]])
