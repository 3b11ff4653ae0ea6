"""Highly-cited set construction and co-cited pair aggregation."""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.stats import rankdata

from .graph_store import CitationGraph

logger = logging.getLogger(__name__)

DEFAULT_MIN_REFS = 5


@dataclass(frozen=True)
class HighlyCitedSet:
    members: frozenset
    percentile_cutoff: float
    grouping: str = "publication-year"

    def __contains__(self, pid) -> bool:
        return pid in self.members

    def __len__(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class CoPair:
    """A co-cited pair with ``x < y`` in id order."""

    x: str
    y: str
    frequency: int
    connected: bool
    first_year: int
    theta: float | None = None

    @property
    def key(self) -> tuple[str, str]:
        return (self.x, self.y)

    def with_theta(self, theta: float | None) -> "CoPair":
        return replace(self, theta=theta)


def pair_key(a: str, b: str) -> tuple[str, str]:
    if a == b:
        raise ValueError(f"a pair needs two distinct publications, got {a!r} twice")
    return (a, b) if a < b else (b, a)


def hazen_percentiles(values: Sequence[tuple[str, float]]) -> dict[str, float]:
    """Hazen plotting positions ``(rank - 0.5) / n`` with ties averaged."""
    if len(values) == 0:
        raise ValueError("hazen_percentiles needs at least one value")
    ids = [v[0] for v in values]
    counts = np.asarray([v[1] for v in values], dtype=float)
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    ranks = rankdata(counts, method="average")
    pct = (ranks - 0.5) / counts.size
    return dict(zip(ids, pct.tolist()))


def build_highly_cited(g: CitationGraph, cutoff: float = 0.99) -> HighlyCitedSet:
    """Publications whose within-year Hazen percentile of in-degree is >= cutoff."""
    if not 0 < cutoff < 1:
        raise ValueError("cutoff must lie in (0, 1)")
    by_year: dict[int, list] = defaultdict(list)
    for pid, year in g.years.items():
        by_year[year].append((pid, g.in_degree(pid)))
    members = set()
    for year in sorted(by_year):
        pct = hazen_percentiles(by_year[year])
        members.update(pid for pid, p in pct.items() if p >= cutoff)
    return HighlyCitedSet(frozenset(members), cutoff)


def _citing_articles(g: CitationGraph, citing_years, min_refs: int) -> list[str]:
    lo, hi = citing_years
    return [pid for pid in g.nodes()
            if lo <= g.year_of(pid) <= hi and len(g.references(pid)) >= min_refs]


def generate_pairs(g: CitationGraph, hcs: HighlyCitedSet, citing_years=(-math.inf, math.inf),
                   min_refs: int = DEFAULT_MIN_REFS) -> Iterator[tuple[str, tuple[str, str]]]:
    """Yield ``(citing_id, (x, y))`` for each highly-cited reference pair.

    Citing articles are those published within ``citing_years`` (inclusive)
    with at least ``min_refs`` references in the graph.
    """
    if min_refs < 1:
        raise ValueError("min_refs must be >= 1")
    for a in _citing_articles(g, citing_years, min_refs):
        refs = sorted(r for r in g.references(a) if r in hcs.members)
        for x, y in combinations(refs, 2):
            yield a, (x, y)


@dataclass
class PairStats:
    """Bookkeeping from :func:`aggregate_pairs`."""

    emitted: int = 0
    inconsistent_years: int = 0


def aggregate_pairs(pair_stream: Iterable[tuple[str, tuple[str, str]]], g: CitationGraph,
                    stats: PairStats | None = None) -> dict[tuple[str, str], CoPair]:
    """Collapse a pair stream into :class:`CoPair` records.

    A citer published before the later pair member cannot co-cite the pair;
    such records are dropped and counted in ``stats.inconsistent_years``.
    """
    stats = stats if stats is not None else PairStats()
    citers: dict[tuple[str, str], set] = defaultdict(set)
    for a, key in pair_stream:
        stats.emitted += 1
        citers[pair_key(*key)].add(a)
    out = {}
    for key in sorted(citers):
        x, y = key
        t0 = max(g.year_of(x), g.year_of(y))
        years = [g.year_of(a) for a in citers[key]]
        valid = [yr for yr in years if yr >= t0]
        stats.inconsistent_years += len(years) - len(valid)
        if not valid:
            continue
        out[key] = CoPair(x, y, frequency=len(valid),
                          connected=g.cites(x, y) or g.cites(y, x),
                          first_year=min(valid))
    return out


# -- parallel pair counting ------------------------------------------------

_WORKER_GRAPH: CitationGraph | None = None
_WORKER_HCS: frozenset | None = None


def _init_worker(g, members):
    global _WORKER_GRAPH, _WORKER_HCS
    _WORKER_GRAPH, _WORKER_HCS = g, members


def _pairs_for_chunk(chunk):
    g, members = _WORKER_GRAPH, _WORKER_HCS
    part: dict[tuple[str, str], list] = {}
    for a in chunk:
        refs = sorted(r for r in g.references(a) if r in members)
        for key in combinations(refs, 2):
            part.setdefault(key, []).append(a)
    return part


def cocited_pairs(g: CitationGraph, hcs: HighlyCitedSet, citing_years=(-math.inf, math.inf),
                  min_refs: int = DEFAULT_MIN_REFS, workers: int = 1, chunk_size: int = 2000,
                  stats: PairStats | None = None) -> dict[tuple[str, str], CoPair]:
    """Generate and aggregate pairs, partitioning citing articles over workers.

    Equivalent to ``aggregate_pairs(generate_pairs(...), g)`` for any worker
    count.
    """
    if min_refs < 1:
        raise ValueError("min_refs must be >= 1")
    articles = _citing_articles(g, citing_years, min_refs)
    chunks = [articles[i:i + chunk_size] for i in range(0, len(articles), chunk_size)]
    if workers <= 1 or len(chunks) <= 1:
        _init_worker(g, hcs.members)
        parts = [_pairs_for_chunk(c) for c in chunks]
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker,
                                 initargs=(g, hcs.members)) as ex:
            parts = list(ex.map(_pairs_for_chunk, chunks))

    def stream():
        for part in parts:
            for key, citing in part.items():
                for a in citing:
                    yield a, key

    return aggregate_pairs(stream(), g, stats)


def frequency_quantiles(pairs, probs: Sequence[float]) -> list[int]:
    """Nearest-rank empirical quantiles of pair frequencies.

    ``pairs`` may be CoPair records or plain integers.
    """
    freqs = np.sort(np.fromiter((p.frequency if isinstance(p, CoPair) else int(p) for p in pairs),
                                dtype=np.int64))
    if freqs.size == 0:
        raise ValueError("no pairs")
    out = []
    for p in probs:
        if not 0 < p < 1:
            raise ValueError(f"probability {p} outside (0, 1)")
        rank = max(1, math.ceil(p * freqs.size))
        out.append(int(freqs[rank - 1]))
    return out


def connectedness_by_percentile(pairs: Sequence[CoPair], n_bins: int = 100) -> list[dict]:
    """Share of connected pairs within each frequency-percentile bin.

    Pairs are ordered by frequency (ties by key) and cut into ``n_bins``
    equal-count bins.
    """
    ordered = sorted(pairs, key=lambda p: (p.frequency, p.key))
    n = len(ordered)
    rows = []
    for b in range(n_bins):
        lo, hi = (b * n) // n_bins, ((b + 1) * n) // n_bins
        chunk = ordered[lo:hi]
        if not chunk:
            continue
        rows.append({"percentile_bin": b, "n_pairs": len(chunk),
                     "min_frequency": chunk[0].frequency, "max_frequency": chunk[-1].frequency,
                     "connected_share": sum(p.connected for p in chunk) / len(chunk)})
    return rows
