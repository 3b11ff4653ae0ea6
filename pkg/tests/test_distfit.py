import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from cocite.distfit import (ConvergenceError, DomainError, EmptyTailError, LognormalFit,
                            NonIdentifiableError, PowerLawFit, TailSample, fit, fit_lognormal,
                            fit_powerlaw, hurwitz_zeta, hurwitz_zeta_deriv, log_hurwitz_zeta,
                            loglik, lognormal_negloglik, lognormal_pmf, nelder_mead,
                            powerlaw_pmf, powerlaw_score, tail_restrict)
from cocite.synth import make_dist, sample_from


def mp_zeta(s, a, n_direct=2000):
    """Exact partial sum plus mpmath's zeta for the remainder."""
    with mp.workdps(40):
        head = mp.fsum(mp.mpf(k + a) ** (-s) for k in range(n_direct))
        return head + mp.zeta(s, a + n_direct)


def long_sum_zeta(s, a, n_terms=10**7):
    """Direct summation of ``n_terms`` terms plus an Euler-Maclaurin tail."""
    k = np.arange(n_terms, dtype=np.float64) + a
    head = math.fsum(np.exp(-s * np.log(k)))
    b = a + n_terms
    tail = b ** (1 - s) / (s - 1) + 0.5 * b ** -s + s * b ** (-s - 1) / 12
    return head + tail


def draw(family, params, x_min, n, seed):
    rng = np.random.default_rng(seed)
    return tail_restrict(sample_from(make_dist(family, params, x_min), n, rng), x_min)


class TestTailSample:
    def test_restrict(self):
        t = tail_restrict([1, 5, 10, 10, 12, 40], 10)
        assert t.as_dict() == {10: 2, 12: 1, 40: 1}
        assert t.total == 4 and t.n_distinct == 3

    def test_mapping_input(self):
        assert tail_restrict({3: 2, 11: 4}, 10).as_dict() == {11: 4}

    def test_empty(self):
        with pytest.raises(EmptyTailError):
            tail_restrict([1, 2, 3], 10)

    def test_bad_x_min(self):
        with pytest.raises(DomainError):
            tail_restrict([1, 2], 0)

    def test_f_obs(self):
        t = tail_restrict([10, 10, 11, 13], 10)
        np.testing.assert_allclose(t.f_obs, [0.5, 0.25, 0.25])


class TestHurwitzZeta:
    def test_riemann_identity(self):
        assert abs(hurwitz_zeta(2, 1) - math.pi ** 2 / 6) < 1e-10

    def test_long_summation(self):
        assert abs(hurwitz_zeta(3.26, 200) - long_sum_zeta(3.26, 200)) < 1e-10

    @pytest.mark.parametrize("s", [1.05, 1.5, 2.0, 2.5, 3.26, 3.37, 7.0, 20.0])
    @pytest.mark.parametrize("a", [1, 2, 10, 200, 5000])
    def test_extended_precision(self, s, a):
        ref = mp_zeta(s, a)
        assert float(abs(hurwitz_zeta(s, a) - ref) / ref) < 1e-13

    def test_derivative_extended_precision(self):
        for s, a in [(1.5, 1), (2.5, 10), (3.26, 200)]:
            with mp.workdps(40):
                ref = -mp.fsum(mp.log(k + a) * mp.mpf(k + a) ** (-s) for k in range(2000))
                ref += mp.zeta(s, a + 2000, 1)
            assert float(abs(hurwitz_zeta_deriv(s, a) - ref) / abs(ref)) < 1e-11

    def test_matches_scipy(self):
        a = np.array([1.0, 3.0, 17.0, 200.0])
        np.testing.assert_allclose(hurwitz_zeta(2.7, a), special.zeta(2.7, a), rtol=1e-12)

    def test_log_form(self):
        assert log_hurwitz_zeta(3.0, 50) == pytest.approx(math.log(hurwitz_zeta(3.0, 50)), rel=1e-14)

    def test_divergence(self):
        with pytest.raises(DomainError):
            hurwitz_zeta(1.0, 1)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(1.01, 10), st.floats(0.001, 2), st.integers(1, 1000))
    def test_monotone_decreasing_in_alpha(self, s, ds, a):
        assert hurwitz_zeta(s + ds, a) < hurwitz_zeta(s, a)


class TestPowerLawPmf:
    def test_normalization(self):
        d = PowerLawFit(3.3, 200)
        x = np.arange(200, 200 + 10**6)
        head = math.fsum(d.pmf(x))
        assert abs(head + d.sf(200 + 10**6) - 1) < 1e-9
        assert d.sf(200) == pytest.approx(1.0, abs=1e-15)

    def test_scale_ratio(self):
        for alpha, xm in [(2.5, 1), (3.3, 200), (4.0, 17)]:
            assert powerlaw_pmf(xm, alpha, xm) / powerlaw_pmf(2 * xm, alpha, xm) == \
                pytest.approx(2 ** alpha, rel=1e-12)

    def test_extended_precision(self, rng):
        for _ in range(20):
            alpha = float(rng.uniform(1.5, 4.5))
            xm = int(rng.integers(1, 300))
            x = xm + int(rng.integers(0, 10_000))
            with mp.workdps(40):
                ref = mp.mpf(x) ** (-alpha) / mp_zeta(alpha, xm)
            assert float(abs(powerlaw_pmf(x, alpha, xm) - ref) / ref) < 1e-12

    def test_below_support(self):
        with pytest.raises(DomainError):
            PowerLawFit(2.5, 10).pmf(9)


class TestLognormalPmf:
    @pytest.mark.parametrize("mu,sigma,xm", [(2, 1, 1), (3, 0.5, 10), (0.5, 2.0, 1), (6, 0.3, 200)])
    def test_quadrature_oracle(self, mu, sigma, xm):
        def dens(u):
            return mp.npdf(mp.log(u), mu, sigma) / u
        with mp.workdps(30):
            norm = mp.quad(dens, [xm - 0.5, mp.exp(mu), mp.inf])
            for x in [xm, xm + 1, xm + 7, int(math.exp(mu)) + xm, xm + 500]:
                ref = mp.quad(dens, [x - 0.5, x + 0.5]) / norm
                got = lognormal_pmf(x, mu, sigma, xm)
                assert abs(got - float(ref)) < 1e-10

    @pytest.mark.parametrize("mu,sigma,xm", [(2, 1, 1), (3, 0.5, 10), (1, 1.5, 5)])
    def test_sums_to_one(self, mu, sigma, xm):
        d = LognormalFit(mu, sigma, xm)
        upper = 10**6
        head = math.fsum(d.pmf(np.arange(xm, upper)))
        assert abs(head + d.sf(upper) - 1) < 1e-9

    def test_x_min_one_lower_cell(self):
        # first cell integrates [0.5, 1.5]
        d = LognormalFit(0.0, 1.0, 1)
        lo, hi = math.log(0.5), math.log(1.5)
        expected = (special.ndtr(hi) - special.ndtr(lo)) / special.ndtr(-lo)
        assert d.pmf(1) == pytest.approx(expected, rel=1e-13)

    def test_cdf_sf_consistency(self):
        d = LognormalFit(2, 1, 3)
        x = np.arange(3, 50)
        np.testing.assert_allclose(d.cdf(x) + d.sf(x + 1), 1.0, atol=1e-15)


class TestLoglik:
    def test_single_observation(self):
        d = PowerLawFit(2.5, 1)
        t = tail_restrict([4], 1)
        assert loglik(t, d) == pytest.approx(math.log(d.pmf(4)))

    def test_doubling(self, rng):
        t = draw("lognormal", {"mu": 2, "sigma": 1}, 1, 500, 1)
        d = LognormalFit(2, 1, 1)
        assert loglik(t.scaled(2), d) == pytest.approx(2 * loglik(t, d), rel=1e-13)

    def test_naive_oracle(self):
        raw = sample_from(PowerLawFit(2.2, 3), 1000, np.random.default_rng(5))
        t = tail_restrict(raw, 3)
        d = PowerLawFit(2.4, 3)
        assert loglik(t, d) == pytest.approx(math.fsum(math.log(d.pmf(int(x))) for x in raw),
                                             rel=1e-12)

    def test_below_x_min(self):
        with pytest.raises(DomainError):
            loglik(tail_restrict([5, 6], 5), PowerLawFit(2.5, 6))


class TestFitPowerLaw:
    @pytest.mark.parametrize("alpha,xm", [(2.5, 1), (3.26, 200)])
    def test_recovery(self, alpha, xm):
        t = draw("powerlaw", {"alpha": alpha}, xm, 10**5, 11)
        f = fit_powerlaw(t)
        assert abs(f.alpha - alpha) < 0.05
        assert abs(f.diagnostics["residual"]) < 1e-9

    def test_grid_oracle(self):
        t = draw("powerlaw", {"alpha": 2.8}, 5, 2000, 3)
        grid = np.arange(1.5, 4.5, 1e-3)
        ll = [-a * t.total * t.mean_log - t.total * math.log(special.zeta(a, t.x_min)) for a in grid]
        assert abs(fit_powerlaw(t).alpha - grid[int(np.argmax(ll))]) < 2e-3

    def test_score_monotone(self):
        t = draw("powerlaw", {"alpha": 3.3}, 200, 5000, 8)
        alphas = np.linspace(1 + 1e-6, 50, 100)
        r = [powerlaw_score(a, t) for a in alphas]
        assert all(np.isfinite(r)) and np.all(np.diff(r) > 0)

    def test_multiplicity_invariance(self):
        t = draw("powerlaw", {"alpha": 2.5}, 1, 3000, 2)
        assert fit_powerlaw(t.scaled(7)).alpha == pytest.approx(fit_powerlaw(t).alpha, abs=1e-10)

    def test_degenerate(self):
        with pytest.raises(NonIdentifiableError):
            fit_powerlaw(tail_restrict([10, 10, 10], 10))

    def test_bracket_expands(self):
        # nearly all mass at x_min pushes alpha past the initial bracket
        t = TailSample(np.array([10, 11]), np.array([10**6, 1]), 10)
        f = fit_powerlaw(t)
        assert f.alpha > 50 and f.diagnostics["bracket_expansions"] >= 1

    def test_report(self):
        f = fit_powerlaw(draw("powerlaw", {"alpha": 2.5}, 1, 500, 0))
        d = f.to_dict()
        assert d["family"] == "powerlaw" and set(d["params"]) == {"alpha"}
        assert {"x_min", "loglik", "n_obs", "convergence"} <= set(d)


class TestFitLognormal:
    def test_recovery(self):
        t = draw("lognormal", {"mu": 2, "sigma": 1}, 1, 10**5, 21)
        f = fit_lognormal(t)
        assert abs(f.mu - 2) < 0.02 and abs(f.sigma - 1) < 0.02

    def test_grid_oracle(self):
        t = draw("lognormal", {"mu": 2, "sigma": 1}, 1, 500, 7)
        mus = np.arange(0, 5.0 + 1e-9, 0.01)
        sigmas = np.arange(0.1, 3.0 + 1e-9, 0.01)
        M, S = np.meshgrid(mus, sigmas, indexing="ij")
        v = t.values[None, None, :]
        lo = (np.log(v - 0.5) - M[..., None]) / S[..., None]
        hi = (np.log(v + 0.5) - M[..., None]) / S[..., None]
        mass = special.ndtr(hi) - special.ndtr(lo)
        norm = special.ndtr(-(math.log(0.5) - M) / S)
        with np.errstate(divide="ignore"):
            ll = (np.log(mass) * t.counts).sum(axis=-1) - t.total * np.log(norm)
        i, j = np.unravel_index(np.argmax(ll), ll.shape)
        f = fit_lognormal(t)
        assert abs(f.mu - mus[i]) < 0.02 and abs(f.sigma - sigmas[j]) < 0.02

    def test_single_value(self):
        with pytest.raises(NonIdentifiableError):
            fit_lognormal(tail_restrict([7, 7, 7], 5))

    def test_not_converged_carries_best(self):
        t = draw("lognormal", {"mu": 2, "sigma": 1}, 1, 300, 1)
        with pytest.raises(ConvergenceError) as e:
            fit_lognormal(t, max_iter=3)
        assert isinstance(e.value.best, LognormalFit)

    def test_loglik_matches_objective(self):
        t = draw("lognormal", {"mu": 3, "sigma": 0.5}, 10, 800, 4)
        f = fit_lognormal(t)
        assert f.loglik == pytest.approx(loglik(t, f), rel=1e-12)
        assert f.loglik == pytest.approx(-lognormal_negloglik((f.mu, f.sigma), t), rel=1e-12)

    def test_fit_dispatch(self):
        t = draw("lognormal", {"mu": 2, "sigma": 1}, 1, 400, 2)
        assert fit(t, "lognormal").family == "lognormal"
        assert fit(t, "powerlaw").family == "powerlaw"
        with pytest.raises(ValueError):
            fit(t, "weibull")


class TestNelderMead:
    def test_rosenbrock(self):
        def f(p):
            return (1 - p[0]) ** 2 + 100 * (p[1] - p[0] ** 2) ** 2
        x, fx, _, ok = nelder_mead(f, np.array([-1.2, 1.0]), [0.5, 0.5], xtol=1e-10)
        assert ok and np.allclose(x, [1, 1], atol=1e-6)


@pytest.mark.slow
class TestConsistency:
    @pytest.mark.parametrize("family,params,truth", [
        ("powerlaw", {"alpha": 2.5}, [2.5]),
        ("lognormal", {"mu": 2.0, "sigma": 1.0}, [2.0, 1.0]),
    ])
    def test_error_shrinks_with_n(self, family, params, truth):
        errs = []
        for n in (10**3, 10**4, 10**5):
            e = []
            for seed in range(20):
                f = fit(draw(family, params, 1, n, 1000 + seed), family)
                e.append(np.abs(np.array(list(f.params.values())) - truth).max())
            errs.append(np.mean(e))
        assert errs[0] > errs[1] > errs[2]
