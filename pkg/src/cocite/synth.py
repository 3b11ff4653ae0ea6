"""Synthetic data with known ground truth.

Exact samplers for the discrete power law and discrete lognormal, a
preferential-attachment citation-corpus generator, and a planted-tail pair
generator used by the calibration and recovery tests.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .copair import CoPair
from .distfit import LognormalFit, PowerLawFit, hurwitz_zeta
from .graph_store import CitationGraph, write_graph_csv

TABLE_MAX = 1 << 20
TAIL_EPS = 1e-12


@dataclass(frozen=True)
class SynthSpec:
    family: str
    params: dict
    x_min: int
    n: int
    seed: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        make_dist(self.family, self.params, self.x_min)  # validates alpha, sigma


def make_dist(family: str, params: dict, x_min: int):
    if family == "powerlaw":
        return PowerLawFit(float(params["alpha"]), int(x_min))
    if family == "lognormal":
        return LognormalFit(float(params["mu"]), float(params["sigma"]), int(x_min))
    raise ValueError(f"unknown family {family!r}")


class DiscreteSampler:
    """Inverse-CDF sampler over a table, with an exact tail beyond it.

    The table covers ``x_min .. x_min + L - 1`` where the remaining mass falls
    below ``TAIL_EPS`` (or ``TABLE_MAX`` entries). Draws that land in the
    tail are generated exactly: the power law by rejection against a
    continuous Pareto envelope, the lognormal by rounding a truncated
    continuous lognormal draw. Any other object with ``x_min``, ``pmf`` and
    ``sf`` is tabulated without a tail, which suits finite supports.
    """

    def __init__(self, dist, table_max: int = TABLE_MAX, tail_eps: float = TAIL_EPS):
        self.dist = dist
        x0 = dist.x_min
        if dist.family == "lognormal":
            z0 = (math.log(x0 - 0.5) - dist.mu) / dist.sigma
            log_end = dist.mu + dist.sigma * -ndtri(tail_eps * ndtr(-z0))
            if log_end >= math.log(x0 + table_max):
                length = table_max
            else:
                length = int(min(table_max, max(16, math.ceil(math.exp(log_end) + 0.5) - x0 + 1)))
        else:
            length = 1024
            while length < table_max and dist.sf(x0 + length) > tail_eps:
                length *= 2
            length = min(length, table_max)
        self.tail_start = x0 + length
        support = np.arange(x0, x0 + length, dtype=float)
        self.cdf = np.cumsum(dist.pmf(support))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(n)
        out = np.empty(n, dtype=np.int64)
        body = u < self.cdf[-1]
        out[body] = self.dist.x_min + np.searchsorted(self.cdf, u[body], side="right")
        n_tail = int(n - body.sum())
        if n_tail and self.dist.family not in ("powerlaw", "lognormal"):
            raise ValueError("tail draw requested from a distribution without a tail sampler")
        if n_tail:
            out[~body] = self._tail(n_tail, rng)
        return out

    def _tail(self, n: int, rng: np.random.Generator) -> np.ndarray:
        d, t = self.dist, self.tail_start
        if d.family == "lognormal":
            q0 = ndtr(-(math.log(t - 0.5) - d.mu) / d.sigma)
            z = -ndtri(rng.random(n) * q0)
            return np.maximum(np.floor(np.exp(d.mu + d.sigma * z) + 0.5), t).astype(np.int64)
        a = d.alpha
        out = np.empty(0, dtype=np.int64)
        # acceptance ratio k**-a / int_k^{k+1} y**-a dy, decreasing in k
        ratio = lambda k: (a - 1.0) / (k * -np.expm1((1.0 - a) * np.log1p(1.0 / k)))
        m = ratio(float(t))
        while out.size < n:
            need = n - out.size
            y = t * rng.random(need + 8) ** (-1.0 / (a - 1.0))
            k = np.floor(y)
            ok = np.isfinite(k) & (rng.random(k.size) * m <= ratio(k))
            out = np.concatenate([out, k[ok].astype(np.int64)])
        return out[:n]


@lru_cache(maxsize=16)
def _cached_sampler(family, params, x_min):
    return DiscreteSampler(make_dist(family, dict(params), x_min))


def sampler_for(dist) -> DiscreteSampler:
    """Sampler for ``dist``, cached for the two fitted families."""
    if getattr(dist, "family", None) not in ("powerlaw", "lognormal"):
        return DiscreteSampler(dist)
    return _cached_sampler(dist.family, tuple(sorted(dist.params.items())), int(dist.x_min))


def sample_from(dist, n: int, rng: np.random.Generator) -> np.ndarray:
    return sampler_for(dist).sample(n, rng)


def sample_discrete(spec: SynthSpec) -> np.ndarray:
    """Draw ``spec.n`` i.i.d. integers from the spec's distribution."""
    dist = make_dist(spec.family, spec.params, spec.x_min)
    return sample_from(dist, spec.n, np.random.default_rng(spec.seed))


def powerlaw_mean(alpha: float, x_min: int) -> float:
    """Analytic mean ``zeta(alpha-1, x_min) / zeta(alpha, x_min)`` (alpha > 2)."""
    return hurwitz_zeta(alpha - 1.0, x_min) / hurwitz_zeta(alpha, x_min)


# -- citation corpora ------------------------------------------------------


@dataclass
class SyntheticCorpus:
    graph: CitationGraph
    spec: dict = field(default_factory=dict)

    @property
    def reference_lists(self) -> dict[str, list[str]]:
        g = self.graph
        return {pid: sorted(g.references(pid)) for pid in g.nodes() if g.references(pid)}

    def write(self, out_dir) -> dict:
        """Write ``nodes.csv``, ``edges.csv`` and ``manifest.json``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_graph_csv(self.graph, out / "nodes.csv", out / "edges.csv")
        manifest = {"schema": "cocite.synth-manifest/1", "generator": "gen_citation_corpus",
                    "spec": self.spec, "n_nodes": self.graph.n_nodes,
                    "n_edges": self.graph.n_edges}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return manifest


def gen_citation_corpus(n_pubs: int, years: tuple[int, int] = (1970, 1995),
                        attach_exponent: float = 1.0, seed: int = 0, min_refs: int = 5,
                        extra_refs_mean: float = 10.0) -> SyntheticCorpus:
    """Time-ordered preferential-attachment citation corpus.

    Each publication cites ``min_refs + Poisson(extra_refs_mean)`` distinct
    publications from strictly earlier years, chosen without replacement
    with weight ``(in_degree + 1) ** attach_exponent``. Publications in the
    first year have no references. ``attach_exponent=0`` gives uniform
    attachment.
    """
    if n_pubs < 10:
        raise ValueError("n_pubs must be >= 10")
    lo, hi = years
    if hi <= lo:
        raise ValueError("need at least two distinct years")
    rng = np.random.default_rng(seed)
    pub_years = np.sort(rng.integers(lo, hi + 1, size=n_pubs))
    width = len(str(n_pubs - 1))
    ids = [f"P{i:0{width}d}" for i in range(n_pubs)]
    indeg = np.zeros(n_pubs, dtype=np.float64)
    # first index of each year: publications before it are citable
    first_of_year = np.searchsorted(pub_years, pub_years, side="left")
    out: dict[str, list[str]] = {}
    for i in range(n_pubs):
        c = int(first_of_year[i])
        if c == 0:
            continue
        k = min(c, min_refs + int(rng.poisson(extra_refs_mean)))
        w = (indeg[:c] + 1.0) ** attach_exponent
        # Efraimidis-Spirakis: top-k of log(u) / w is a weighted draw without replacement
        keys = np.log(rng.random(c)) / w
        chosen = np.argpartition(keys, c - k)[c - k:] if k < c else np.arange(c)
        indeg[chosen] += 1
        out[ids[i]] = [ids[j] for j in np.sort(chosen)]
    g = CitationGraph(dict(zip(ids, pub_years.tolist())), out)
    spec = {"n_pubs": n_pubs, "years": [lo, hi], "attach_exponent": attach_exponent,
            "seed": seed, "min_refs": min_refs, "extra_refs_mean": extra_refs_mean}
    return SyntheticCorpus(g, spec)


# -- planted pair sets -----------------------------------------------------


def planted_pairs(n_per_cell: int, theta_edges: Sequence[float], choose: Callable,
                  seed: int, x_min: int = 10, base_year: int = 1980) -> list[CoPair]:
    """Pairs with frequencies drawn from a chosen family in each stratum.

    ``choose(theta_bin_index, connected)`` returns a distribution object
    (``PowerLawFit`` or ``LognormalFit``) whose support starts at
    ``x_min``; ``theta`` is uniform within each bin.
    """
    rng = np.random.default_rng(seed)
    pairs = []
    idx = 0
    for b in range(len(theta_edges) - 1):
        lo, hi = theta_edges[b], theta_edges[b + 1]
        for connected in (True, False):
            dist = choose(b, connected)
            n = n_per_cell(b, connected) if callable(n_per_cell) else n_per_cell
            if dist is None or n == 0:
                continue
            freqs = sample_from(dist, n, rng)
            thetas = lo + (hi - lo) * rng.random(n)
            for f, th in zip(freqs, thetas):
                pairs.append(CoPair(f"A{idx:08d}", f"B{idx:08d}", int(f), connected,
                                    base_year, float(th)))
                idx += 1
    return pairs
