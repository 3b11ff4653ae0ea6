"""Discrete lognormal and discrete power-law fits to right tails.

Both families are conditioned on ``x >= x_min`` (the tail start). The power
law is normalised by the Hurwitz zeta function, evaluated here by direct
summation plus an Euler-Maclaurin remainder; its MLE is the root of the
first-order condition

    zeta'(alpha, x_min) / zeta(alpha, x_min) = -mean(ln x)

found by bisection. The lognormal assigns each integer the mass of the
continuous lognormal on ``[x - 0.5, x + 0.5]`` and is fitted with a
Nelder-Mead simplex on the log-likelihood.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np
from scipy.special import log_ndtr, ndtr

logger = logging.getLogger(__name__)


class FitError(Exception):
    """Base class for fitting failures."""


class EmptyTailError(FitError):
    pass


class NonIdentifiableError(FitError):
    pass


class ConvergenceError(FitError):
    """Raised when an optimiser stops without converging.

    ``best`` carries the best fit found so far.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DomainError(FitError, ValueError):
    pass


# -- tail samples ----------------------------------------------------------


@dataclass(frozen=True)
class TailSample:
    """Frequency multiset restricted to ``x >= x_min``.

    ``values`` are the distinct frequencies in increasing order and
    ``counts`` their multiplicities.
    """

    values: np.ndarray
    counts: np.ndarray
    x_min: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.int64)
        c = np.asarray(self.counts, dtype=np.int64)
        if v.shape != c.shape or v.ndim != 1:
            raise ValueError("values and counts must be 1-d arrays of equal length")
        if v.size == 0 or c.sum() < 1:
            raise EmptyTailError(f"no observations >= {self.x_min}")
        if np.any(np.diff(v) <= 0):
            raise ValueError("values must be strictly increasing")
        if v[0] < self.x_min or np.any(c < 1):
            raise ValueError("values must be >= x_min with positive counts")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "counts", c)

    @classmethod
    def from_counts(cls, counts: Mapping[int, int], x_min: int) -> "TailSample":
        items = sorted((int(k), int(v)) for k, v in counts.items() if k >= x_min and v > 0)
        if not items:
            raise EmptyTailError(f"no observations >= {x_min}")
        return cls(np.array([k for k, _ in items]), np.array([v for _, v in items]), int(x_min))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def n_distinct(self) -> int:
        return int(self.values.size)

    @property
    def f_obs(self) -> np.ndarray:
        """Observed conditional pmf ``n(x) / N(x_min)`` on :attr:`values`."""
        return self.counts / self.counts.sum()

    @cached_property
    def mean_log(self) -> float:
        return float(np.dot(self.counts, np.log(self.values)) / self.counts.sum())

    def as_dict(self) -> dict[int, int]:
        return {int(v): int(c) for v, c in zip(self.values, self.counts)}

    def expand(self) -> np.ndarray:
        return np.repeat(self.values, self.counts)

    def scaled(self, k: int) -> "TailSample":
        return TailSample(self.values, self.counts * int(k), self.x_min)


def tail_restrict(frequencies, x_min: int) -> TailSample:
    """Keep the observations ``>= x_min``.

    ``frequencies`` is either an iterable of integer observations or a
    mapping ``frequency -> multiplicity``.
    """
    if x_min < 1:
        raise DomainError("x_min must be >= 1")
    if isinstance(frequencies, Mapping):
        return TailSample.from_counts(frequencies, x_min)
    arr = np.asarray(list(frequencies) if not isinstance(frequencies, np.ndarray) else frequencies)
    arr = arr[arr >= x_min].astype(np.int64)
    if arr.size == 0:
        raise EmptyTailError(f"no observations >= {x_min}")
    v, c = np.unique(arr, return_counts=True)
    return TailSample(v, c, int(x_min))


# -- Hurwitz zeta ------------------------------------------------------------

# B_2j / (2j)! for j = 1..10
_BERNOULLI = [Fraction(1, 6), Fraction(-1, 30), Fraction(1, 42), Fraction(-1, 30),
              Fraction(5, 66), Fraction(-691, 2730), Fraction(7, 6), Fraction(-3617, 510),
              Fraction(43867, 798), Fraction(-174611, 330)]
_EM_COEF = [float(b / math.factorial(2 * j)) for j, b in enumerate(_BERNOULLI, start=1)]
# direct-sum terms until the Euler-Maclaurin base b = a + shift exceeds
# _EM_BASE + s, which keeps the asymptotic series rapidly convergent
_EM_BASE = 12.0


def _zeta_scaled(s: float, a):
    """Return ``(S, D)`` with ``S = a**s * zeta(s, a)`` and
    ``D = a**s * d/ds zeta(s, a)``.

    Scaling by ``a**s`` keeps both quantities O(1) for large ``a`` or ``s``.
    """
    if not s > 1:
        raise DomainError(f"Hurwitz zeta diverges for s={s} <= 1")
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0):
        raise DomainError("Hurwitz zeta requires a > 0")
    la = np.log(a)
    shift = np.maximum(0, np.ceil(_EM_BASE + s - a)).astype(np.int64)
    S = np.zeros_like(a)
    D = np.zeros_like(a)
    for k in range(int(shift.max(initial=0))):
        m = k < shift
        lt = np.log(a + k)
        w = np.where(m, np.exp(-s * (lt - la)), 0.0)
        S += w
        D -= lt * w
    b = a + shift
    lb = np.log(b)
    wb = np.exp(-s * (lb - la))  # (a/b)**s
    s1 = s - 1.0
    S += wb * b / s1 + 0.5 * wb
    D += wb * b * (-lb / s1 - 1.0 / s1 ** 2) - 0.5 * lb * wb
    poly = s            # s (s+1) ... (s+2j-2)
    dlog_poly = 1.0 / s  # sum of 1/(s+i) over the same factors
    bpow = wb / b       # (a/b)**s * b**(1-2j), j = 1
    for j, c in enumerate(_EM_COEF, start=1):
        if j > 1:
            for i in (2 * j - 3, 2 * j - 2):
                poly *= s + i
                dlog_poly += 1.0 / (s + i)
            bpow = bpow / (b * b)
        S += c * poly * bpow
        D += c * bpow * (poly * dlog_poly - poly * lb)
    return S, D


def hurwitz_zeta(alpha: float, x_min) -> float | np.ndarray:
    """Hurwitz zeta ``sum_{k>=0} (k + x_min)**-alpha``.

    Accepts an array of ``x_min`` values. Absolute error is below 1e-12 for
    moderate arguments (direct summation, then Euler-Maclaurin with ten
    Bernoulli terms at a base of at least ``alpha + 12``).
    """
    S, _ = _zeta_scaled(float(alpha), x_min)
    out = S * np.exp(-alpha * np.log(np.asarray(x_min, dtype=float)))
    return float(out) if np.ndim(out) == 0 else out


def hurwitz_zeta_deriv(alpha: float, x_min) -> float | np.ndarray:
    """``d/d alpha`` of :func:`hurwitz_zeta`, i.e. ``-sum ln(k+a) (k+a)**-alpha``."""
    _, D = _zeta_scaled(float(alpha), x_min)
    out = D * np.exp(-alpha * np.log(np.asarray(x_min, dtype=float)))
    return float(out) if np.ndim(out) == 0 else out


def log_hurwitz_zeta(alpha: float, x_min) -> float | np.ndarray:
    S, _ = _zeta_scaled(float(alpha), x_min)
    out = np.log(S) - alpha * np.log(np.asarray(x_min, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def zeta_log_derivative(alpha: float, x_min: float) -> float:
    """``zeta'(alpha, x_min) / zeta(alpha, x_min)``; equals ``-E[ln X]``."""
    S, D = _zeta_scaled(float(alpha), x_min)
    return float(D / S)


# -- distributions -----------------------------------------------------------


def _as_float_array(x):
    return np.asarray(x, dtype=float)


@dataclass(frozen=True)
class PowerLawFit:
    """Discrete power law ``x**-alpha / zeta(alpha, x_min)`` on ``x >= x_min``."""

    alpha: float
    x_min: int
    loglik: float = float("nan")
    n_obs: int = 0
    diagnostics: dict = field(default_factory=dict, compare=False, hash=False)

    family = "powerlaw"
    n_params = 1

    def __post_init__(self):
        if not self.alpha > 1:
            raise DomainError(f"alpha must be > 1, got {self.alpha}")
        if self.x_min < 1:
            raise DomainError("x_min must be >= 1")

    @cached_property
    def log_norm(self) -> float:
        return log_hurwitz_zeta(self.alpha, self.x_min)

    def _check(self, x):
        x = _as_float_array(x)
        if np.any(x < self.x_min):
            raise DomainError(f"observation below x_min={self.x_min}")
        return x

    def logpmf(self, x):
        x = self._check(x)
        return -self.alpha * np.log(x) - self.log_norm

    def pmf(self, x):
        return np.exp(self.logpmf(x))

    def sf(self, x):
        """``P(X >= x)``; 1 for ``x <= x_min``."""
        x = np.maximum(_as_float_array(x), self.x_min)
        return np.exp(log_hurwitz_zeta(self.alpha, x) - self.log_norm)

    def cdf(self, x):
        """``P(X <= x)``."""
        return 1.0 - self.sf(_as_float_array(x) + 1)

    @property
    def params(self) -> dict:
        return {"alpha": self.alpha}

    def to_dict(self) -> dict:
        return {"family": self.family, "x_min": int(self.x_min), "params": self.params,
                "loglik": self.loglik, "n_obs": int(self.n_obs),
                "convergence": dict(self.diagnostics)}


@dataclass(frozen=True)
class LognormalFit:
    """Discrete lognormal conditioned on ``x >= x_min``.

    The unnormalised mass of integer ``x`` is
    ``Phi((ln(x+0.5)-mu)/sigma) - Phi((ln(x-0.5)-mu)/sigma)``; the
    normaliser telescopes to ``1 - Phi((ln(x_min-0.5)-mu)/sigma)``.
    """

    mu: float
    sigma: float
    x_min: int
    loglik: float = float("nan")
    n_obs: int = 0
    diagnostics: dict = field(default_factory=dict, compare=False, hash=False)

    family = "lognormal"
    n_params = 2

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError(f"sigma must be > 0, got {self.sigma}")
        if self.x_min < 1:
            raise DomainError("x_min must be >= 1")

    def _z(self, q):
        return (np.log(q) - self.mu) / self.sigma

    @cached_property
    def log_norm(self) -> float:
        return float(log_ndtr(-self._z(self.x_min - 0.5)))

    def _check(self, x):
        x = _as_float_array(x)
        if np.any(x < self.x_min):
            raise DomainError(f"observation below x_min={self.x_min}")
        return x

    def log_unnormalized(self, x):
        """``ln f~(x | mu, sigma)``, the log mass of ``[x-0.5, x+0.5]``."""
        x = _as_float_array(x)
        return _log_interval_mass(self._z(x - 0.5), self._z(x + 0.5))

    def logpmf(self, x):
        x = self._check(x)
        return self.log_unnormalized(x) - self.log_norm

    def pmf(self, x):
        return np.exp(self.logpmf(x))

    def sf(self, x):
        x = np.maximum(_as_float_array(x), self.x_min)
        return np.exp(log_ndtr(-self._z(x - 0.5)) - self.log_norm)

    def cdf(self, x):
        return 1.0 - self.sf(_as_float_array(x) + 1)

    @property
    def params(self) -> dict:
        return {"mu": self.mu, "sigma": self.sigma}

    def to_dict(self) -> dict:
        return {"family": self.family, "x_min": int(self.x_min), "params": self.params,
                "loglik": self.loglik, "n_obs": int(self.n_obs),
                "convergence": dict(self.diagnostics)}


def _log_interval_mass(z_lo, z_hi):
    """``ln(Phi(z_hi) - Phi(z_lo))`` without cancellation in either tail."""
    z_lo = np.asarray(z_lo, dtype=float)
    z_hi = np.asarray(z_hi, dtype=float)
    upper = z_lo > 0
    # upper tail: Q(z_lo) - Q(z_hi); lower tail: Phi(z_hi) - Phi(z_lo)
    big = np.where(upper, log_ndtr(-z_lo), log_ndtr(z_hi))
    small = np.where(upper, log_ndtr(-z_hi), log_ndtr(z_lo))
    with np.errstate(divide="ignore"):
        return big + np.log1p(-np.exp(small - big))


def lognormal_pmf(x, mu: float, sigma: float, x_min: int):
    if not sigma > 0:
        raise DomainError("sigma must be > 0")
    return LognormalFit(mu, sigma, x_min).pmf(x)


def powerlaw_pmf(x, alpha: float, x_min: int):
    return PowerLawFit(alpha, x_min).pmf(x)


def loglik(t: TailSample, dist) -> float:
    """Tail log-likelihood ``sum_x n(x) ln f(x)``."""
    if t.values[0] < dist.x_min:
        raise DomainError(f"observation {t.values[0]} below x_min={dist.x_min}")
    lp = dist.logpmf(t.values)
    if not np.all(np.isfinite(lp)):
        raise DomainError("zero probability assigned to an observed frequency")
    return float(np.dot(t.counts, lp))


# -- power-law MLE -----------------------------------------------------------

ALPHA_BRACKET = (1.0 + 1e-6, 50.0)


def powerlaw_score(alpha: float, t: TailSample) -> float:
    """Residual of the first-order condition; increasing in alpha."""
    return zeta_log_derivative(alpha, t.x_min) + t.mean_log


def fit_powerlaw(t: TailSample, tol: float = 1e-9, bracket=ALPHA_BRACKET,
                 max_expand: int = 8) -> PowerLawFit:
    """Maximum-likelihood exponent by bisection on the first-order condition.

    The residual ``zeta'/zeta + mean(ln x)`` equals ``mean(ln x) - E_alpha[ln X]``,
    which increases monotonically in ``alpha``, so the root is unique when
    ``mean(ln x) > ln(x_min)``.
    """
    if t.mean_log <= math.log(t.x_min) + 1e-15:
        raise NonIdentifiableError("all observations equal x_min; alpha is unbounded")
    lo, hi = bracket
    r_lo, r_hi = powerlaw_score(lo, t), powerlaw_score(hi, t)
    expansions = 0
    while r_hi < 0 and expansions < max_expand:
        lo, r_lo = hi, r_hi
        hi *= 2.0
        r_hi = powerlaw_score(hi, t)
        expansions += 1
    if not (r_lo < 0 < r_hi):
        raise ConvergenceError(f"root not bracketed in [{lo}, {hi}]")
    it = 0
    while hi - lo > 1e-14 * hi and it < 200:
        mid = 0.5 * (lo + hi)
        r = powerlaw_score(mid, t)
        if r < 0:
            lo = mid
        else:
            hi = mid
        it += 1
        if abs(r) < tol * 1e-3:
            lo = hi = mid
            break
    alpha = 0.5 * (lo + hi)
    resid = powerlaw_score(alpha, t)
    if abs(resid) >= tol:
        raise ConvergenceError(f"bisection residual {resid:.3g} exceeds {tol}",
                               best=PowerLawFit(alpha, t.x_min))
    dist = PowerLawFit(alpha, t.x_min)
    return PowerLawFit(alpha, t.x_min, loglik=loglik(t, dist), n_obs=t.total,
                       diagnostics={"method": "bisection", "iterations": it,
                                    "residual": resid, "bracket_expansions": expansions})


# -- lognormal MLE -----------------------------------------------------------


def nelder_mead(f, x0, step, xtol=1e-8, max_iter=5000):
    """Minimise ``f`` with the downhill simplex method.

    Stops when every vertex lies within ``xtol`` of the best one. Returns
    ``(x_best, f_best, iterations, converged)``.
    """
    n = len(x0)
    simplex = np.empty((n + 1, n))
    simplex[0] = x0
    for i in range(n):
        simplex[i + 1] = x0
        simplex[i + 1, i] += step[i]
    fs = np.array([f(p) for p in simplex])
    it = 0
    converged = False
    while it < max_iter:
        order = np.argsort(fs, kind="stable")
        simplex, fs = simplex[order], fs[order]
        if np.max(np.abs(simplex[1:] - simplex[0])) < xtol:
            converged = True
            break
        it += 1
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + (centroid - worst)
        fr = f(xr)
        if fr < fs[0]:
            xe = centroid + 2.0 * (centroid - worst)
            fe = f(xe)
            if fe < fr:
                simplex[-1], fs[-1] = xe, fe
            else:
                simplex[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-2]:
            simplex[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            xc = centroid + 0.5 * (xr - centroid)
            fc = f(xc)
            if fc <= fr:
                simplex[-1], fs[-1] = xc, fc
                continue
        else:
            xc = centroid + 0.5 * (worst - centroid)
            fc = f(xc)
            if fc < fs[-1]:
                simplex[-1], fs[-1] = xc, fc
                continue
        simplex[1:] = simplex[0] + 0.5 * (simplex[1:] - simplex[0])
        fs[1:] = [f(p) for p in simplex[1:]]
    order = np.argsort(fs, kind="stable")
    return simplex[order[0]].copy(), float(fs[order[0]]), it, converged


def lognormal_negloglik(params, t: TailSample) -> float:
    mu, sigma = params
    if not sigma > 0 or not np.isfinite(mu):
        return np.inf
    z_lo = (np.log(t.values - 0.5) - mu) / sigma
    z_hi = (np.log(t.values + 0.5) - mu) / sigma
    lp = _log_interval_mass(z_lo, z_hi)
    norm = log_ndtr(-(math.log(t.x_min - 0.5) - mu) / sigma)
    val = -(float(np.dot(t.counts, lp)) - t.total * float(norm))
    return val if np.isfinite(val) else np.inf


def fit_lognormal(t: TailSample, xtol: float = 1e-8, max_iter: int = 5000) -> LognormalFit:
    """Maximum-likelihood ``(mu, sigma)`` by Nelder-Mead.

    Starts from the mean and standard deviation of ``ln x`` over the tail and
    restarts once from a perturbed simplex around the first optimum.
    """
    if t.n_distinct < 2:
        raise NonIdentifiableError("a single distinct value cannot identify (mu, sigma)")
    logs = np.log(t.values)
    mu0 = t.mean_log
    sigma0 = math.sqrt(float(np.dot(t.counts, (logs - mu0) ** 2)) / t.total)
    sigma0 = max(sigma0, 1e-3)

    def f(p):
        return lognormal_negloglik(p, t)

    x, fx, it1, ok1 = nelder_mead(f, np.array([mu0, sigma0]),
                                  [0.1 * max(1.0, abs(mu0)), 0.25 * sigma0], xtol, max_iter)
    restart = np.array([x[0] + 0.05 * max(1.0, abs(x[0])), x[1] * 1.1])
    x2, fx2, it2, ok2 = nelder_mead(f, restart, [0.05 * max(1.0, abs(x[0])), 0.1 * x[1]],
                                    xtol, max_iter)
    if fx2 <= fx:
        x, fx = x2, fx2
    diag = {"method": "nelder-mead", "iterations": it1 + it2, "restarted": True,
            "converged": bool(ok1 and ok2), "xtol": xtol}
    best = LognormalFit(float(x[0]), float(x[1]), t.x_min, loglik=-fx, n_obs=t.total,
                        diagnostics=diag)
    if not (ok1 and ok2):
        raise ConvergenceError("simplex did not contract below tolerance", best=best)
    return best


def fit(t: TailSample, family: str):
    if family == "powerlaw":
        return fit_powerlaw(t)
    if family == "lognormal":
        return fit_lognormal(t)
    raise ValueError(f"unknown family {family!r}")
