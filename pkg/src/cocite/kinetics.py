"""Delayed co-citation measures: the beauty coefficient and the timelag.

The beauty coefficient follows Ke et al. (PNAS 2015), applied to
co-citations of a pair rather than citations of one publication, with age zero
``t0`` set to the publication year of the younger member:

    B = sum_{t=t0}^{t_peak} ((c_peak - c0) / (t_peak - t0) * (t - t0) + c0 - c_t) / max(1, c_t)

where ``c_t`` is the number of co-citations in year ``t``, ``c0 = c_t0`` and
``t_peak`` is the first year holding the maximum count. Years without
co-citations count as ``c_t = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .graph_store import CitationGraph


class KineticsError(ValueError):
    pass


@dataclass(frozen=True)
class CoTimeline:
    x: str
    y: str
    t0: int
    counts: dict = field(default_factory=dict)
    dropped: int = 0  # co-citers dated before t0

    @property
    def c0(self) -> int:
        return self.counts.get(self.t0, 0)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def peak_year(self) -> int | None:
        if not self.counts:
            return None
        peak = max(self.counts.values())
        return min(t for t, c in self.counts.items() if c == peak)

    @property
    def first_year(self) -> int | None:
        nz = [t for t, c in self.counts.items() if c > 0]
        return min(nz) if nz else None


def cocitation_timeline(g: CitationGraph, x: str, y: str) -> CoTimeline:
    """Per-year counts of articles citing both ``x`` and ``y``."""
    t0 = max(g.year_of(x), g.year_of(y))
    both = g.citers(x) & g.citers(y)
    counts: dict[int, int] = {}
    dropped = 0
    for a in both:
        yr = g.year_of(a)
        if yr < t0:
            dropped += 1
            continue
        counts[yr] = counts.get(yr, 0) + 1
    return CoTimeline(x, y, t0, dict(sorted(counts.items())), dropped)


def beauty_coefficient_exact(tl: CoTimeline) -> Fraction:
    if not tl.counts:
        raise KineticsError("timeline has no co-citations")
    t_peak = tl.peak_year
    if t_peak <= tl.t0:
        return Fraction(0)
    c0 = tl.c0
    c_peak = tl.counts[t_peak]
    slope = Fraction(c_peak - c0, t_peak - tl.t0)
    b = Fraction(0)
    for t in range(tl.t0, t_peak + 1):
        c = tl.counts.get(t, 0)
        b += (slope * (t - tl.t0) + c0 - c) / max(1, c)
    return b


def beauty_coefficient(tl: CoTimeline) -> float:
    return float(beauty_coefficient_exact(tl))


def timelag(tl: CoTimeline) -> int:
    """Years from ``t0`` to the first recorded co-citation."""
    first = tl.first_year
    if first is None:
        raise KineticsError("no co-citations; timelag undefined")
    return first - tl.t0


def kinetics_row(g: CitationGraph, x: str, y: str, connected: bool | None = None) -> dict:
    tl = cocitation_timeline(g, x, y)
    row = {"x": x, "y": y, "t0": tl.t0, "c0": tl.c0, "t_peak": tl.peak_year,
           "B": None, "t_l": None, "frequency": tl.total,
           "connected": (g.cites(x, y) or g.cites(y, x)) if connected is None else connected,
           "dropped": tl.dropped}
    if tl.counts:
        row["B"] = beauty_coefficient(tl)
        row["t_l"] = timelag(tl)
    return row
