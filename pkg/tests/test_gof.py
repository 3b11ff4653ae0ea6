import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cocite.copair import CoPair
from cocite.distfit import LognormalFit, PowerLawFit, TailSample, fit_lognormal, fit_powerlaw, tail_restrict
from cocite.gof import (FIT, INSUFFICIENT, NO_FIT, Bin, BinSet, _decide, build_bins, chi2_test,
                        expected_contributions, family_fits, fit_grid, independence_test, kl,
                        kl_divergence, ks_statistic, ks_test, stratify, theta_bin_index,
                        two_sample_ks)
from cocite.synth import sample_from

from conftest import FiniteDist


def _binset(O, E, e_min=5):
    return BinSet(tuple(Bin((i,), o, e) for i, (o, e) in enumerate(zip(O, E))), e_min)


class TestBuildBins:
    def test_hand_trace(self):
        t = TailSample(np.arange(10, 16), np.full(6, 3), 10)
        dist = FiniteDist({x: 1 / 6 for x in range(10, 16)}, 10)
        np.testing.assert_allclose(expected_contributions(t, dist), 3.0)
        bs = build_bins(t, dist, 5)
        assert [b.frequencies for b in bs.bins] == [(15, 14), (13, 12), (11, 10)]
        assert [b.expected for b in bs.bins] == pytest.approx([6, 6, 6])
        assert [b.observed for b in bs.bins] == [6, 6, 6]

    def test_threshold_above_total(self):
        t = TailSample(np.arange(10, 16), np.full(6, 3), 10)
        dist = FiniteDist({x: 1 / 6 for x in range(10, 16)}, 10)
        bs = build_bins(t, dist, 1000)
        assert bs.k == 1 and bs.bins[0].frequencies == (15, 14, 13, 12, 11, 10)

    def test_gaps_carry_mass(self):
        # 11 and 13 unobserved: their mass rides with the observed frequency below
        t = TailSample(np.array([10, 12, 14]), np.array([1, 1, 1]), 10)
        dist = FiniteDist({x: 0.2 for x in range(10, 15)}, 10)
        np.testing.assert_allclose(expected_contributions(t, dist), [1.2, 1.2, 0.6])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([10, 20, 50, 70]))
    def test_partition_and_mass(self, seed, e_min):
        rng = np.random.default_rng(seed)
        t = tail_restrict(sample_from(PowerLawFit(2.5, 10), 1000, rng), 10)
        d = fit_powerlaw(t)
        bs = build_bins(t, d, e_min)
        flat = [f for b in bs.bins for f in b.frequencies]
        assert sorted(flat) == t.values.tolist() and len(flat) == len(set(flat))
        assert flat == sorted(flat, reverse=True)
        assert bs.observed.sum() == t.total
        assert abs(bs.expected.sum() - t.total) < 1e-6
        assert all(b.expected >= e_min for b in bs.bins[:-1])
        assert bs.violations == 0


class TestChi2:
    def test_perfect_fit(self):
        r = chi2_test(_binset([5, 7, 9], [5, 7, 9]), 0)
        assert r.statistic == 0 and r.p_value == 1.0 and r.verdict == FIT

    def test_two_bins(self):
        r = chi2_test(_binset([10, 0], [5, 5]), 0)
        assert r.statistic == 10 and r.df == 1

    def test_df_too_small(self):
        r = chi2_test(_binset([10, 0], [5, 5]), 1)
        assert r.p_value is None and r.verdict == INSUFFICIENT

    def test_df_uses_fitted_params(self):
        bs = _binset([5, 6, 7, 8, 9], [6, 6, 6, 8, 9])
        assert chi2_test(bs, 1).df == 3 and chi2_test(bs, 2).df == 2

    def test_permutation_invariant(self, rng):
        O = rng.integers(5, 40, size=8)
        E = rng.uniform(5, 40, size=8)
        perm = rng.permutation(8)
        a = chi2_test(_binset(O, E), 2)
        b = chi2_test(_binset(O[perm], E[perm]), 2)
        assert a.statistic == pytest.approx(b.statistic, rel=1e-14)
        assert a.p_value == pytest.approx(b.p_value, rel=1e-12)

    def test_rejects_wrong_family(self):
        rng = np.random.default_rng(0)
        t = tail_restrict(sample_from(LognormalFit(1.0, 0.4, 1), 5000, rng), 1)
        r = chi2_test(build_bins(t, fit_powerlaw(t), 20), 1)
        assert r.verdict == NO_FIT


class TestKS:
    def test_exact_match(self):
        t = TailSample(np.array([1, 2]), np.array([1, 3]), 1)
        assert ks_statistic(t, FiniteDist({1: 0.25, 2: 0.75}, 1)) == 0

    def test_single_point_gap(self):
        t = TailSample(np.array([10]), np.array([50]), 10)
        assert ks_statistic(t, FiniteDist({10: 0.3, 11: 0.7}, 10)) == pytest.approx(0.7)

    def test_full_scan_oracle(self, rng):
        raw = sample_from(PowerLawFit(2.3, 5), 800, rng)
        t = tail_restrict(raw, 5)
        d = fit_powerlaw(t)
        best = 0.0
        for x in t.values:
            f_obs = np.mean(raw <= x)
            f_fit = 1.0 - d.sf(x + 1)
            best = max(best, abs(f_obs - f_fit))
        assert abs(ks_statistic(t, d) - best) < 1e-12

    def test_zero_multiplicity_points_ignored(self):
        d = PowerLawFit(2.5, 10)
        t1 = TailSample.from_counts({10: 4, 13: 2, 40: 1}, 10)
        t2 = TailSample.from_counts({10: 4, 11: 0, 13: 2, 20: 0, 40: 1}, 10)
        assert ks_statistic(t1, d) == ks_statistic(t2, d)

    def test_two_sample(self):
        assert two_sample_ks(np.array([1, 2, 3]), np.array([1, 2, 3])) == 0
        assert two_sample_ks(np.array([1, 1]), np.array([2, 2])) == 1

    def test_zero_statistic_gives_p_one(self):
        t = TailSample(np.array([1, 2]), np.array([1, 3]), 1)
        d = FiniteDist({1: 0.25, 2: 0.75}, 1)
        assert ks_test(t, d, n_sim=100, seed=1).p_value == 1.0

    def test_granularity_and_determinism(self, rng):
        t = tail_restrict(sample_from(PowerLawFit(2.5, 1), 300, rng), 1)
        d = fit_powerlaw(t)
        r1 = ks_test(t, d, n_sim=100, seed=42)
        r2 = ks_test(t, d, n_sim=100, seed=42)
        assert r1 == r2
        assert abs(r1.p_value * 100 - round(r1.p_value * 100)) < 1e-9

    def test_classical_variant(self, rng):
        t = tail_restrict(sample_from(LognormalFit(2, 1, 1), 400, rng), 1)
        d = fit_lognormal(t)
        r = ks_test(t, d, n_sim=30, seed=1, variant="classical")
        assert r.details["variant"] == "classical" and 0 <= r.p_value <= 1

    def test_unknown_variant(self, rng):
        t = tail_restrict(sample_from(PowerLawFit(2.5, 1), 50, rng), 1)
        with pytest.raises(ValueError):
            ks_test(t, PowerLawFit(2.5, 1), n_sim=2, variant="bogus")


class TestKL:
    def test_two_cell(self):
        assert kl([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.5 * math.log(2) + 0.5 * math.log(2 / 3))
        assert kl([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.1438, abs=1e-4)
        assert kl([0.25, 0.75], [0.5, 0.5]) == pytest.approx(0.1308, abs=1e-4)

    def test_self_zero(self):
        t = TailSample(np.array([1, 2]), np.array([1, 3]), 1)
        d = FiniteDist({1: 0.25, 2: 0.75}, 1)
        assert kl_divergence(t, d, "obs||fit") == 0
        assert kl_divergence(t, d, "fit||obs") == 0

    def test_infinite_sentinel(self):
        assert kl([0.5, 0.5], [1.0, 0.0]) == math.inf

    def test_zero_log_zero(self):
        assert kl([0.0, 1.0], [0.5, 0.5]) == pytest.approx(math.log(2))

    def test_unknown_direction(self):
        t = TailSample(np.array([1]), np.array([1]), 1)
        with pytest.raises(ValueError):
            kl_divergence(t, FiniteDist({1: 1.0}, 1), "sideways")


def _pairs(freqs, thetas, connected=True):
    return [CoPair(f"a{i}", f"b{i}", int(f), connected, 1990, float(th))
            for i, (f, th) in enumerate(zip(freqs, thetas))]


class TestThetaBins:
    def test_edges(self):
        e = (0, 0.2, 0.4, 0.6, 0.8, 1.0)
        assert theta_bin_index(0.0, e) == 0
        assert theta_bin_index(0.2, e) == 1
        assert theta_bin_index(0.999, e) == 4
        assert theta_bin_index(1.0, e) == 4
        assert theta_bin_index(None, e) is None


class TestIndependence:
    def test_identical_rows(self):
        freqs, thetas = [], []
        for th in (0.1, 0.3, 0.5, 0.7, 0.9):
            for f, n in ((15, 40), (150, 20), (1500, 10), (15000, 10)):
                freqs += [f] * n
                thetas += [th] * n
        r = independence_test(_pairs(freqs, thetas))
        assert r.statistic == pytest.approx(0, abs=1e-12) and r.p_value == pytest.approx(1.0)
        assert r.df == 12

    def test_merges_sparse_columns(self):
        rng = np.random.default_rng(3)
        freqs = sample_from(PowerLawFit(2.5, 10), 3000, rng)
        thetas = rng.uniform(0, 1, size=3000)
        r = independence_test(_pairs(freqs, thetas))
        assert len(r.details["table"][0]) >= 2
        assert r.details["min_expected"] >= 5 or len(r.details["table"][0]) == 2

    def test_planted_dependence(self):
        rng = np.random.default_rng(4)
        freqs, thetas = [], []
        for b in range(5):
            d = PowerLawFit(2.0, 10) if b == 0 else LognormalFit(2.0, 0.5, 10)
            freqs += sample_from(d, 2000, rng).tolist()
            thetas += (0.2 * b + 0.2 * rng.random(2000)).tolist()
        assert independence_test(_pairs(freqs, thetas)).p_value < 1e-6

    def test_empty_row_insufficient(self):
        r = independence_test(_pairs([20, 200, 30], [0.1, 0.1, 0.3]))
        assert r.verdict == INSUFFICIENT and r.p_value is None


class TestFitRule:
    def test_ks_alone_suffices(self):
        assert family_fits(0.06, [0.01, 0.01, 0.01, 0.01])

    def test_two_chi2(self):
        assert family_fits(0.0, [0.2, 0.06, 0.01, 0.0])
        assert not family_fits(0.0, [0.2, 0.01, 0.01, None])

    def test_boundary_inclusive(self):
        assert family_fits(0.05, [])

    def test_decide(self):
        assert _decide({"powerlaw": {"fits": False}, "lognormal": {"fits": False}}) == ("neither", False)
        both = {"powerlaw": {"fits": True, "loglik": -5.0, "bic_loglik": -6.0},
                "lognormal": {"fits": True, "loglik": -4.0, "bic_loglik": -6.5}}
        assert _decide(both) == ("powerlaw", True)


class TestGrid:
    def test_single_distinct_insufficient(self):
        cells = fit_grid(_pairs([20] * 50, [0.1] * 50), n_sim=10)
        c = next(c for c in cells if c.theta_bin == (0.0, 0.2) and c.connected)
        assert c.verdict == "insufficient" and c.n_distinct == 1

    def test_undefined_theta_excluded(self):
        pairs = _pairs([20, 30], [0.1, 0.1]) + [CoPair("u", "v", 40, True, 1990, None)]
        strata, undefined = stratify(pairs, (0, 0.5, 1.0))
        assert undefined == 1 and strata == {(0, True): [20, 30]}

    @pytest.fixture(scope="class")
    @classmethod
    def planted(cls):
        rng = np.random.default_rng(10)
        freqs = sample_from(PowerLawFit(3.3, 10), 1500, rng)
        return _pairs(freqs, rng.uniform(0, 0.2, size=1500))

    def test_recovers_powerlaw(self, planted):
        cells = fit_grid(planted, x_min_values=(10,), n_sim=50, seed=1)
        c = next(c for c in cells if c.theta_bin == (0.0, 0.2) and c.connected)
        assert c.verdict == "powerlaw"
        assert abs(c.results["powerlaw"]["params"]["alpha"] - 3.3) < 0.15

    def test_workers_do_not_change_results(self, planted):
        a = fit_grid(planted, x_min_values=(10, 20), n_sim=20, seed=3, workers=1)
        b = fit_grid(planted, x_min_values=(10, 20), n_sim=20, seed=3, workers=2)
        assert [c.to_dict() for c in a] == [c.to_dict() for c in b]
