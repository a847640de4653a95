from pathlib import Path

import numpy as np
import pytest

from citrus import graphs

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def random_adjacency(rng, n, p=0.5):
    a = np.triu((rng.random((n, n)) < p) * rng.uniform(0.5, 1.5, (n, n)), 1)
    return a + a.T


def random_laplacian(rng, n, p=0.5):
    return graphs.build_graph(random_adjacency(rng, n, p)).laplacian


def connected_graph(rng, n, p=0.5):
    while True:
        g = graphs.build_graph(random_adjacency(rng, n, p))
        if g.is_connected():
            return g


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
