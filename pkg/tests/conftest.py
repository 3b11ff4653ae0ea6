"""Shared fixtures and reference implementations for the test suite."""
from __future__ import annotations

import numpy as np
import pytest

from cocite.graph_store import CitationGraph


class FiniteDist:
    """A pmf with finite support, standing in for a fitted distribution."""

    family = "finite"

    def __init__(self, probs: dict, x_min: int, n_params: int = 0):
        self.probs = {int(k): float(v) for k, v in probs.items()}
        self.x_min = x_min
        self.n_params = n_params

    def pmf(self, x):
        x = np.asarray(x)
        return np.vectorize(lambda v: self.probs.get(int(v), 0.0), otypes=[float])(x)

    def logpmf(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self.pmf(x))

    def sf(self, x):
        x = np.asarray(x)
        return np.vectorize(lambda v: sum(p for k, p in self.probs.items() if k >= v),
                            otypes=[float])(x)

    def cdf(self, x):
        return 1.0 - self.sf(np.asarray(x) + 1)


def random_graph(rng: np.random.Generator, n_nodes: int, n_edges: int,
                 years=(1970, 2000)) -> CitationGraph:
    ids = [f"n{i}" for i in range(n_nodes)]
    yrs = rng.integers(years[0], years[1] + 1, size=n_nodes)
    out: dict[str, set] = {}
    for _ in range(n_edges):
        a, b = rng.integers(0, n_nodes, size=2)
        if a != b:
            out.setdefault(ids[a], set()).add(ids[b])
    return CitationGraph(dict(zip(ids, yrs.tolist())), out)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_graph():
    # B and C cite A; D cites A and B
    return CitationGraph({"A": 1980, "B": 1985, "C": 1986, "D": 1990},
                         {"B": {"A"}, "C": {"A"}, "D": {"A", "B"}})


def brute_theta(g: CitationGraph, x: str, y: str, cutoff: int):
    """Theta by explicit set algebra over the whole edge list.

    Returns ``(edge_count, |N(x)|, |N(y)|)`` or ``None`` when undefined.
    """
    edges = set(g.edges())
    nodes = g.nodes()
    nx = {a for a in nodes if (a, x) in edges and (a, y) not in edges and g.year_of(a) <= cutoff}
    ny = {b for b in nodes if (b, y) in edges and (b, x) not in edges and g.year_of(b) <= cutoff}
    if not nx or not ny:
        return None
    e = sum((a, b) in edges for a in nx for b in ny) + sum((b, a) in edges for a in nx for b in ny)
    return e, len(nx), len(ny)


# criterion number -> (status, detail), filled by test_acceptance
ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {status}  {detail}")
