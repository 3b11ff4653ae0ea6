"""Prior co-citation probability from first-degree citation neighbourhoods.

For a pair ``(x, y)`` first co-cited in year ``T``:

* ``N(x)`` holds publications citing ``x`` but not ``y``, published in or
  before ``T``; ``N(y)`` is defined symmetrically.
* ``E(x, y)`` holds the directed citations between the two sets in either
  direction, so a mutual citation contributes two edges.
* ``theta = |E| / (|N(x)| |N(y)|)``, clamped to 1.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .copair import CoPair
from .graph_store import CitationGraph, NodeNotFound

logger = logging.getLogger(__name__)


class UndefinedThetaError(ValueError):
    """A proxy neighbourhood is empty, so theta has no denominator."""


@dataclass(frozen=True)
class ProxyNeighborhoods:
    nx: frozenset
    ny: frozenset
    cutoff_year: int


@dataclass(frozen=True)
class ThetaResult:
    x: str
    y: str
    edge_count: int | None
    nx_size: int | None
    ny_size: int | None
    status: str = "ok"

    @property
    def defined(self) -> bool:
        return self.status == "ok"

    @property
    def raw_fraction(self) -> Fraction | None:
        if not self.defined:
            return None
        return Fraction(self.edge_count, self.nx_size * self.ny_size)

    @property
    def raw_theta(self) -> float | None:
        r = self.raw_fraction
        return None if r is None else float(r)

    @property
    def theta_fraction(self) -> Fraction | None:
        r = self.raw_fraction
        return None if r is None else min(r, Fraction(1))

    @property
    def theta(self) -> float | None:
        r = self.theta_fraction
        return None if r is None else float(r)

    @property
    def clamped(self) -> bool:
        r = self.raw_fraction
        return r is not None and r > 1


def proxy_neighborhoods(g: CitationGraph, x: str, y: str, cutoff_year: int) -> ProxyNeighborhoods:
    if x == y:
        raise ValueError("x and y must differ")
    cx, cy = g.citers(x), g.citers(y)
    years = g.years
    nx = frozenset(a for a in cx if a not in cy and years[a] <= cutoff_year)
    ny = frozenset(b for b in cy if b not in cx and years[b] <= cutoff_year)
    return ProxyNeighborhoods(nx, ny, cutoff_year)


def proxy_edge_count(g: CitationGraph, n: ProxyNeighborhoods) -> int:
    """Directed citations between ``nx`` and ``ny`` in both directions."""
    if not n.nx or not n.ny:
        raise UndefinedThetaError("empty proxy neighbourhood")
    count = 0
    # a -> b and b -> a are both counted; walk each side's reference lists
    for src, dst in ((n.nx, n.ny), (n.ny, n.nx)):
        for a in src:
            refs = g.references(a)
            count += len(refs & dst) if len(refs) > len(dst) else sum(1 for r in refs if r in dst)
    return count


def compute_theta(g: CitationGraph, pair: CoPair) -> ThetaResult:
    """Theta for one pair, using ``pair.first_year`` as the cutoff.

    Raises :class:`UndefinedThetaError` when either neighbourhood is empty.
    """
    n = proxy_neighborhoods(g, pair.x, pair.y, pair.first_year)
    e = proxy_edge_count(g, n)
    return ThetaResult(pair.x, pair.y, e, len(n.nx), len(n.ny))


def _theta_or_undefined(g, pair) -> ThetaResult:
    try:
        return compute_theta(g, pair)
    except UndefinedThetaError:
        return ThetaResult(pair.x, pair.y, None, None, None, status="undefined")
    except NodeNotFound:
        return ThetaResult(pair.x, pair.y, None, None, None, status="not-found")


_WORKER_GRAPH: CitationGraph | None = None


def _init_worker(g):
    global _WORKER_GRAPH
    _WORKER_GRAPH = g


def _run_batch(batch):
    return [_theta_or_undefined(_WORKER_GRAPH, p) for p in batch]


def theta_batch(g: CitationGraph, pairs: Sequence[CoPair], batch_size: int = 50,
                workers: int = 1) -> list[ThetaResult]:
    """Theta for many pairs, order-aligned with the input.

    Pairs are split into batches of ``batch_size`` and spread over
    ``workers`` processes sharing one read-only copy of the graph each.
    Failures are recorded per slot (``status`` other than ``"ok"``).
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    pairs = list(pairs)
    batches = [pairs[i:i + batch_size] for i in range(0, len(pairs), batch_size)]
    if workers <= 1 or len(batches) <= 1:
        return [_theta_or_undefined(g, p) for p in pairs]
    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(g,)) as ex:
        out = []
        for res in ex.map(_run_batch, batches, chunksize=max(1, len(batches) // (4 * workers))):
            out.extend(res)
    return out


def attach_theta(pairs: Sequence[CoPair], results: Sequence[ThetaResult]) -> list[CoPair]:
    return [p.with_theta(r.theta) for p, r in zip(pairs, results)]
