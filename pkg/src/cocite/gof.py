"""Goodness of fit for tail distributions, and the theta-independence test.

Binning for the chi-square test walks the distinct observed frequencies from
the largest down, closing a bin once its expected count reaches the
threshold. Each distinct frequency carries the expected mass of the integer
run up to the next larger observed frequency (the largest carries the whole
upper tail, the smallest extends down to ``x_min``), so expected counts sum
to the sample size.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import chi2 as chi2_dist

from .copair import CoPair
from .distfit import (ConvergenceError, FitError, NonIdentifiableError, TailSample,
                      fit_lognormal, fit_powerlaw, tail_restrict)
from .synth import sample_from

logger = logging.getLogger(__name__)

DEFAULT_E_MINS = (10, 20, 50, 70)
DEFAULT_THETA_EDGES = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
FREQUENCY_EDGES = (10, 100, 1000, 10000)
SIGNIFICANCE = 0.05

FIT, NO_FIT, INSUFFICIENT = "fit", "no-fit", "insufficient-data"


@dataclass(frozen=True)
class Bin:
    frequencies: tuple
    observed: int
    expected: float


@dataclass(frozen=True)
class BinSet:
    bins: tuple
    e_min: float

    @property
    def k(self) -> int:
        return len(self.bins)

    @property
    def observed(self) -> np.ndarray:
        return np.array([b.observed for b in self.bins], dtype=float)

    @property
    def expected(self) -> np.ndarray:
        return np.array([b.expected for b in self.bins], dtype=float)

    @property
    def violations(self) -> int:
        """Bins other than the last with expected count below ``e_min``."""
        return sum(b.expected < self.e_min for b in self.bins[:-1])


@dataclass(frozen=True)
class GofReport:
    test: str
    statistic: float
    p_value: float | None = None
    df: int | None = None
    verdict: str = FIT
    details: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {"test": self.test, "statistic": _num(self.statistic), "p_value": _num(self.p_value),
                "df": self.df, "verdict": self.verdict, **self.details}


def _num(v):
    if v is None:
        return None
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def verdict_for(p: float | None, alpha: float = SIGNIFICANCE) -> str:
    if p is None:
        return INSUFFICIENT
    return NO_FIT if p < alpha else FIT


# -- chi-square ------------------------------------------------------------


def expected_contributions(t: TailSample, dist) -> np.ndarray:
    """Expected count attached to each distinct observed frequency."""
    lo = t.values.astype(float).copy()
    lo[0] = t.x_min
    sf = np.append(dist.sf(lo), 0.0)
    mass = np.clip(sf[:-1] - sf[1:], 0.0, None)
    return mass * t.total


def build_bins(t: TailSample, dist, e_min: float) -> BinSet:
    """Group distinct frequencies from the right tail until ``E_i >= e_min``."""
    if t.total < 1:
        raise ValueError("empty sample")
    contrib = expected_contributions(t, dist)
    bins = []
    cur, obs, exp_ = [], 0, 0.0
    for i in range(t.n_distinct - 1, -1, -1):
        cur.append(int(t.values[i]))
        obs += int(t.counts[i])
        exp_ += float(contrib[i])
        if exp_ >= e_min:
            bins.append(Bin(tuple(cur), obs, exp_))
            cur, obs, exp_ = [], 0, 0.0
    if cur:
        bins.append(Bin(tuple(cur), obs, exp_))
    return BinSet(tuple(bins), float(e_min))


def chi2_test(bins: BinSet, n_fitted_params: int) -> GofReport:
    """Pearson chi-square with ``k - 1 - n_fitted_params`` degrees of freedom."""
    O, E = bins.observed, bins.expected
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(E > 0, (O - E) ** 2 / E, np.where(O > 0, np.inf, 0.0))
    stat = float(terms.sum())
    df = bins.k - 1 - n_fitted_params
    details = {"e_min": bins.e_min, "k": bins.k, "violations": bins.violations}
    if df < 1:
        return GofReport("chi2", stat, None, df, INSUFFICIENT, details)
    p = float(chi2_dist.sf(stat, df))
    return GofReport("chi2", stat, p, df, verdict_for(p), details)


# -- Kolmogorov-Smirnov ----------------------------------------------------


def ks_statistic(t: TailSample, dist) -> float:
    """``max |F_obs - F_fit|`` over the observed distinct frequencies."""
    f_obs = np.cumsum(t.counts) / t.total
    return float(np.max(np.abs(f_obs - dist.cdf(t.values))))


def two_sample_ks(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.sort(a), np.sort(b)
    grid = np.union1d(a, b)
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def _refit(sample: np.ndarray, family: str, x_min: int):
    t = tail_restrict(sample, x_min)
    try:
        return t, (fit_powerlaw(t) if family == "powerlaw" else fit_lognormal(t))
    except ConvergenceError as e:
        if e.best is None:
            raise
        return t, e.best


def ks_test(t: TailSample, dist, n_sim: int = 100, seed=0, variant: str = "two-sample") -> GofReport:
    """Simulated K-S test.

    ``variant="two-sample"`` compares the observed statistic with the distance
    between two independent simulated samples of the same size, each drawn
    from ``dist``. ``variant="classical"`` instead refits the family on each
    simulated sample and measures that sample against its own refit (a
    parametric bootstrap). The p-value is the share of simulated distances
    at least as large as the observed one.
    """
    d_obs = ks_statistic(t, dist)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    n = t.total
    sims = []
    failed = 0
    for child in ss.spawn(n_sim):
        rng = np.random.default_rng(child)
        if variant == "two-sample":
            sims.append(two_sample_ks(sample_from(dist, n, rng), sample_from(dist, n, rng)))
        elif variant == "classical":
            try:
                ts, refit = _refit(sample_from(dist, n, rng), dist.family, dist.x_min)
            except FitError:
                failed += 1
                continue
            sims.append(ks_statistic(ts, refit))
        else:
            raise ValueError(f"unknown K-S variant {variant!r}")
    sims = np.asarray(sims)
    details = {"n_sim": n_sim, "variant": variant, "n_obs": n}
    if failed:
        details["failed_replicates"] = failed
    if sims.size == 0:
        return GofReport("ks", d_obs, None, None, INSUFFICIENT, details)
    # small slack so that ties in exact arithmetic are not broken by rounding
    p = float(np.mean(sims >= d_obs - 1e-12))
    return GofReport("ks", d_obs, p, None, verdict_for(p), details)


# -- Kullback-Leibler ------------------------------------------------------


def kl(p, q) -> float:
    """``sum p ln(p / q)`` with ``0 ln 0 = 0``; ``inf`` when q = 0 < p."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    pos = p > 0
    if np.any(q[pos] <= 0):
        return math.inf
    return float(np.sum(p[pos] * np.log(p[pos] / q[pos])))


def kl_divergence(t: TailSample, dist, direction: str = "obs||fit") -> float:
    """K-L divergence between the observed tail pmf and the fitted pmf.

    Both directions are evaluated over the observed distinct frequencies.
    """
    f_obs = t.f_obs
    f_fit = dist.pmf(t.values)
    if direction in ("obs||fit", "kl_fo_fd"):
        return kl(f_obs, f_fit)
    if direction in ("fit||obs", "kl_fd_fo"):
        return kl(f_fit, f_obs)
    raise ValueError(f"unknown direction {direction!r}")


# -- theta strata ----------------------------------------------------------


def theta_bin_index(theta: float, edges: Sequence[float]) -> int | None:
    """Index of the half-open bin holding theta; the last bin is closed."""
    if theta is None or math.isnan(theta):
        return None
    if theta < edges[0] or theta > edges[-1]:
        return None
    for i in range(len(edges) - 1):
        if theta < edges[i + 1]:
            return i
    return len(edges) - 2


def _frequency_column(f: int, edges: Sequence[int]) -> int:
    col = 0
    for i, e in enumerate(edges):
        if f >= e:
            col = i
    return col


def independence_test(pairs: Sequence[CoPair], theta_edges=DEFAULT_THETA_EDGES,
                      frequency_edges=FREQUENCY_EDGES, min_expected: float = 5.0) -> GofReport:
    """Chi-square test that the frequency distribution does not depend on theta.

    Rows are theta bins, columns logarithmic frequency bins. The highest
    frequency columns are merged pairwise (down to two) until every expected
    count reaches ``min_expected``.
    """
    rows = len(theta_edges) - 1
    table = np.zeros((rows, len(frequency_edges)), dtype=np.int64)
    skipped = 0
    for p in pairs:
        r = theta_bin_index(p.theta, theta_edges) if p.theta is not None else None
        if r is None or p.frequency < frequency_edges[0]:
            skipped += 1
            continue
        table[r, _frequency_column(p.frequency, frequency_edges)] += 1
    edges = list(frequency_edges)

    def expected(tab):
        n = tab.sum()
        return np.outer(tab.sum(axis=1), tab.sum(axis=0)) / n if n else np.zeros(tab.shape)

    while table.shape[1] > 2 and expected(table).min() < min_expected:
        table = np.column_stack([table[:, :-2], table[:, -2:].sum(axis=1)])
        edges.pop()
    details = {"table": table.tolist(), "frequency_edges": edges, "theta_edges": list(theta_edges),
               "skipped": skipped}
    if table.sum() == 0 or np.any(table.sum(axis=1) == 0) or np.any(table.sum(axis=0) == 0):
        return GofReport("independence", math.nan, None, None, INSUFFICIENT, details)
    E = expected(table)
    details["min_expected"] = float(E.min())
    stat = float(((table - E) ** 2 / E).sum())
    df = (table.shape[0] - 1) * (table.shape[1] - 1)
    p = float(chi2_dist.sf(stat, df))
    # "fit" here means independence is not rejected
    return GofReport("independence", stat, p, df, verdict_for(p), details)


# -- stratified fit grid ---------------------------------------------------

FAMILIES = ("powerlaw", "lognormal")


def family_fits(ks_p: float | None, chi2_ps: Sequence[float | None],
                alpha: float = SIGNIFICANCE) -> bool:
    """Either the K-S test or at least two chi-square tests fail to reject."""
    ks_ok = ks_p is not None and ks_p >= alpha
    n_chi = sum(1 for p in chi2_ps if p is not None and p >= alpha)
    return ks_ok or n_chi >= 2


def assess_family(t: TailSample, family: str, e_mins=DEFAULT_E_MINS, n_sim: int = 100,
                  seed=0, ks_variant: str = "two-sample") -> dict:
    """Fit one family to a tail and run the full test battery."""
    try:
        d = fit_powerlaw(t) if family == "powerlaw" else fit_lognormal(t)
        converged = True
    except ConvergenceError as e:
        if e.best is None:
            return {"family": family, "error": str(e), "fits": False}
        d, converged = e.best, False
    except NonIdentifiableError as e:
        return {"family": family, "error": str(e), "fits": False}
    chi = {}
    for e_min in e_mins:
        rep = chi2_test(build_bins(t, d, e_min), d.n_params)
        chi[str(e_min)] = {"statistic": rep.statistic, "p_value": rep.p_value, "df": rep.df,
                           "k": rep.details["k"], "violations": rep.details["violations"]}
    ks = ks_test(t, d, n_sim=n_sim, seed=seed, variant=ks_variant)
    fits = family_fits(ks.p_value, [c["p_value"] for c in chi.values()])
    bic_loglik = d.loglik - 0.5 * d.n_params * math.log(t.total)
    return {"family": family, "params": d.params, "loglik": d.loglik, "bic_loglik": bic_loglik,
            "converged": converged,
            "ks_statistic": ks.statistic, "ks_p": ks.p_value, "chi2": chi,
            "kl_fo_fd": kl_divergence(t, d, "obs||fit"), "kl_fd_fo": kl_divergence(t, d, "fit||obs"),
            "fits": fits}


@dataclass
class GridCell:
    theta_bin: tuple
    x_min: int
    connected: bool | None
    n_obs: int
    n_distinct: int
    verdict: str
    both_fit: bool = False
    results: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"theta_bin": list(self.theta_bin), "x_min": self.x_min, "connected": self.connected,
                "n_obs": self.n_obs, "n_distinct": self.n_distinct, "verdict": self.verdict,
                "both_fit": self.both_fit, "families": self.results}


def _decide(results: dict) -> tuple[str, bool]:
    fitting = [f for f in FAMILIES if results.get(f, {}).get("fits")]
    if not fitting:
        return "neither", False
    if len(fitting) == 1:
        return fitting[0], False
    # both fit: the lognormal nearly nests the power law, so raw likelihood
    # would always favour it; compare BIC-penalised log-likelihoods instead
    best = max(fitting, key=lambda f: results[f]["bic_loglik"])
    return best, True


def stratify(pairs: Sequence[CoPair], theta_edges, connected_split: bool = True):
    """Group pair frequencies by (theta bin, connected).

    Pairs with undefined theta are left out. Returns ``(strata, n_undefined)``.
    """
    strata: dict[tuple, list] = {}
    undefined = 0
    for p in pairs:
        if p.theta is None:
            undefined += 1
            continue
        b = theta_bin_index(p.theta, theta_edges)
        if b is None:
            undefined += 1
            continue
        key = (b, p.connected if connected_split else None)
        strata.setdefault(key, []).append(p.frequency)
    return strata, undefined


def _run_cell(job) -> GridCell:
    (b, lo, hi), x_min, conn, freqs, e_mins, n_sim, seed_key, min_obs, ks_variant = job
    freqs = np.asarray(freqs, dtype=np.int64)
    tail = freqs[freqs >= x_min]
    n_obs, n_distinct = int(tail.size), int(np.unique(tail).size)
    cell = GridCell((lo, hi), x_min, conn, n_obs, n_distinct, "insufficient")
    if n_obs < min_obs or n_distinct < 2:
        return cell
    t = tail_restrict(tail, x_min)
    for fi, family in enumerate(FAMILIES):
        cell.results[family] = assess_family(t, family, e_mins, n_sim,
                                             np.random.SeedSequence(list(seed_key) + [fi]),
                                             ks_variant)
    cell.verdict, cell.both_fit = _decide(cell.results)
    return cell


def fit_grid(pairs: Sequence[CoPair], theta_edges=DEFAULT_THETA_EDGES, x_min_values=(10,),
             connected_split: bool = True, e_mins=DEFAULT_E_MINS, n_sim: int = 100, seed: int = 0,
             min_obs: int = 20, workers: int = 1, ks_variant: str = "two-sample") -> list[GridCell]:
    """Fit both families in every (theta bin, x_min, connectedness) cell.

    A family fits a cell when its K-S p-value or at least two of its
    chi-square p-values reach 0.05. When both fit, the one with the larger
    BIC-penalised log-likelihood is reported and ``both_fit`` is set. Cells
    with fewer than ``min_obs`` observations or a single distinct frequency
    are ``insufficient``.
    Results do not depend on ``workers``: every cell seeds its own streams
    from ``seed`` and its position in the grid.
    """
    strata, _ = stratify(pairs, theta_edges, connected_split)
    splits = (True, False) if connected_split else (None,)
    jobs = []
    for b in range(len(theta_edges) - 1):
        for conn in splits:
            freqs = strata.get((b, conn), [])
            for xi, x_min in enumerate(x_min_values):
                seed_key = (int(seed), b, xi, {True: 1, False: 0, None: 2}[conn])
                jobs.append(((b, theta_edges[b], theta_edges[b + 1]), int(x_min), conn, freqs,
                             tuple(e_mins), n_sim, seed_key, min_obs, ks_variant))
    if workers <= 1:
        return [_run_cell(j) for j in jobs]
    with ProcessPoolExecutor(workers) as ex:
        return list(ex.map(_run_cell, jobs))
