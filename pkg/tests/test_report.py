import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from covmod.binning import quantile_bins
from covmod.errors import ConfigError, InputError
from covmod.fit import ModelFit, fit_joint
from covmod.ingest import Dataset, z_to_p
from covmod.mixture import BinParams, to_transformed
from covmod.report import (
    PosteriorScore,
    call_significant,
    fit_one_bin,
    null_posterior_and_gradient,
    pi0_interval,
    posterior_curve,
    posterior_prob,
    rank_by_prob,
    rank_compare,
    score_all,
    score_arrays,
    storey_pi0,
    threshold_curve,
)
from covmod.simulation import SimConfig, simulate
from covmod.validation import delta_grad_check

from oracles import null_posterior

P_GRID = np.linspace(1e-12, 1 - 1e-12, 1001)


def _manual_fit(params, cov=None):
    """A fit object with given natural parameters per bin, for direct tests."""
    mode = np.concatenate([to_transformed(BinParams(*p)).as_array() for p in params])
    B = len(params)
    cov = np.tile(np.eye(3) * 0.01, (B, 1, 1)) if cov is None else cov
    return ModelFit(layout=None, mode=mode, precision_banded=np.zeros((4, 3 * B)), covariance_blocks=cov,
                    lambdas=None, c=1.0, ridge=0.0, init=mode, log_post_at_mode=0.0, iterations=0,
                    converged=True, grad_norm=0.0)


class TestPosteriorProb:
    def test_at_one(self, strong_small):
        *_, fit = strong_small
        for j in range(1, fit.B + 1):
            prob, lo, hi = posterior_prob(1 - 1e-12, j, fit)
            assert abs(prob - 1.0) <= 1e-9

    def test_zero_covariance(self, strong_small):
        *_, fit = strong_small
        prob, lo, hi = posterior_prob(0.02, 2, fit, sigma=np.zeros((3, 3)))
        assert lo == prob == hi

    @given(st.floats(1e-10, 1 - 1e-10), st.tuples(st.floats(-4, 4), st.floats(-3, 3), st.floats(-2, 3)))
    def test_value_matches_oracle(self, p, t):
        a, _ = null_posterior_and_gradient(p, t)
        assert float(a) == pytest.approx(float(null_posterior(p, t)), rel=1e-10)

    def test_delta_gradient_finite_differences(self):
        rng = np.random.default_rng(8)
        worst = max(delta_grad_check(float(rng.uniform(1e-3, 0.9)), rng.uniform([-3, -2, -1], [3, 2, 2]))
                    for _ in range(100))
        assert worst <= 1e-5

    def test_contracts_on_fit(self, strong_small):
        *_, fit = strong_small
        for j in range(1, fit.B + 1):
            prob, lo, hi = posterior_curve(fit, j, P_GRID)
            assert np.all((prob > 0) & (prob <= 1))
            assert np.all(np.diff(prob) >= -1e-12)
            assert np.all((0 <= lo) & (lo <= prob) & (prob <= hi) & (hi <= 1))

    @given(st.lists(st.tuples(st.floats(0.01, 0.99), st.floats(0.05, 0.99), st.floats(2.01, 60)),
                    min_size=1, max_size=3))
    def test_contracts_any_parameters(self, params):
        fit = _manual_fit(params)
        for j in range(1, fit.B + 1):
            prob, lo, hi = posterior_curve(fit, j, P_GRID)
            assert np.all((prob > 0) & (prob <= 1))
            assert np.all(np.diff(prob) >= -1e-12)
            assert np.all((lo <= prob) & (prob <= hi))

    def test_intervals_shrink_with_more_data(self):
        widths = []
        for m in (500, 5000, 50000):
            ds, _ = simulate(SimConfig(m=m, pibar0=0.5, pi0_at_0=0.55, pi0_at_1=0.45, seed=31))
            _, lo, hi = posterior_prob(0.01, 1, fit_one_bin(ds))
            widths.append(hi - lo)
        assert widths[0] > widths[1] > widths[2]


class TestScoring:
    def test_score_all(self, strong_small):
        ds, _, layout, fit = strong_small
        scores = score_all(ds, fit)
        assert [s.id for s in scores] == list(ds.ids)
        assert sorted(s.rank_cov for s in scores) == list(range(1, ds.m + 1))
        for j in range(1, fit.B + 1):
            mine = sorted((s.p, s.prob) for s in scores if s.bin == j)
            assert all(b[1] >= a[1] for a, b in zip(mine, mine[1:]))

    def test_ties_ordered_by_id(self, strong_small):
        *_, fit = strong_small
        ds = Dataset(("b", "a", "c"), np.array([0.01, 0.01, 0.5]), np.array([0.3, 0.3, 0.3]))
        scores = score_all(ds, fit, np.array([2, 2, 2]))
        assert scores[0].prob == scores[1].prob
        assert (scores[1].rank_cov, scores[0].rank_cov) == (1, 2)

    def test_rank_tie_break(self):
        r = rank_by_prob([0.5, 0.2, 0.2, 0.2], [0.1, 0.3, 0.2, 0.2], ["d", "c", "b", "a"])
        assert r.tolist() == [4, 3, 2, 1]

    def test_bad_assignment(self, strong_small):
        ds, _, _, fit = strong_small
        with pytest.raises(InputError):
            score_arrays(ds, fit, np.ones(3, dtype=int))


class TestOneBin:
    def test_pure_null(self):
        p = np.random.default_rng(10).random(5000)
        ds = Dataset(tuple(f"r{i}" for i in range(5000)), p, np.zeros(5000))
        est, lo, hi = pi0_interval(fit_one_bin(ds))
        assert est >= 0.9 and lo < est < hi

    def test_weak_case_conservative(self):
        ds, _ = simulate(SimConfig(m=30000, pibar0=0.5, pi0_at_0=0.55, pi0_at_1=0.45, seed=17))
        est, _, _ = pi0_interval(fit_one_bin(ds))
        assert abs(est - 0.5) <= 0.1


class TestStorey:
    def test_hand_count(self):
        p = [0.1, 0.2, 0.3, 0.4, 0.45, 0.5, 0.6, 0.7, 0.8, 0.9]
        assert storey_pi0(p, 0.5) == pytest.approx(0.8, rel=1e-15)

    def test_truncated(self):
        assert storey_pi0([0.7, 0.8, 0.9], 0.5) == 1.0

    def test_degenerate_warns(self):
        with pytest.warns(RuntimeWarning):
            assert storey_pi0([0.1, 0.2], 0.5) == 0.0

    @pytest.mark.parametrize("lam", [0.0, 1.0, -0.1, 1.5])
    def test_bad_lambda(self, lam):
        with pytest.raises(ConfigError):
            storey_pi0([0.5], lam)


def _scores(probs):
    return [PosteriorScore(f"t{i}", 0.1, 0.0, 1, p, p, p, i + 1) for i, p in enumerate(probs)]


class TestSignificance:
    def test_thresholds(self):
        s = _scores([0.001, 0.3, 0.999, 1.0])
        assert call_significant(s, 0.0).n_significant == 0
        assert call_significant(s, 1.0).flags.tolist() == [True, True, True, False]
        assert call_significant(s).flags.tolist() == [True, False, False, False]

    def test_self_comparison(self):
        s = _scores([0.001, 0.3, 0.02])
        c = call_significant(s, 0.05, baseline=s)
        assert c.covariate_only == 0 and c.baseline_only == 0 and c.both == 2

    @given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=50), st.floats(0, 1))
    def test_counts_partition(self, pairs, thr):
        a = _scores([u for u, _ in pairs])
        b = _scores([v for _, v in pairs])
        c = call_significant(a, thr, baseline=b)
        assert c.both + c.covariate_only + c.baseline_only + c.neither == len(pairs)

    @pytest.mark.parametrize("thr", [-0.1, 1.5, math.nan])
    def test_bad_threshold(self, thr):
        with pytest.raises(ConfigError):
            call_significant(_scores([0.5]), thr)


class TestRankCompare:
    def test_identical(self):
        s = _scores([0.1, 0.2, 0.3])
        assert [r.displacement for r in rank_compare(s, s)] == [0, 0, 0]

    def test_transposition(self):
        a = [PosteriorScore("u", 0.1, 0, 1, 0.1, 0.1, 0.1, 1), PosteriorScore("v", 0.1, 0, 1, 0.2, 0.2, 0.2, 2)]
        b = [PosteriorScore("u", 0.1, 0, 1, 0.2, 0.2, 0.2, 2), PosteriorScore("v", 0.1, 0, 1, 0.1, 0.1, 0.1, 1)]
        pairs = rank_compare(a, b)
        assert [p.id for p in pairs] == ["u", "v"]
        assert [p.displacement for p in pairs] == [1, -1]

    def test_id_mismatch(self):
        with pytest.raises(InputError):
            rank_compare(_scores([0.1]), [PosteriorScore("zz", 0.1, 0, 1, 0.1, 0.1, 0.1, 1)])

    def test_strong_modulation_reshuffles_more(self):
        disp = {}
        for name, cfg in (("weak", (0.5, 0.55, 0.45)), ("strong", (0.5, 0.9, 0.1))):
            ds, _ = simulate(SimConfig(m=6000, pibar0=cfg[0], pi0_at_0=cfg[1], pi0_at_1=cfg[2], seed=4))
            fit = fit_joint(ds, quantile_bins(ds, 10))
            pairs = rank_compare(score_all(ds, fit), score_all(ds, fit_one_bin(ds)))
            disp[name] = np.mean([abs(r.displacement) for r in pairs])
        assert disp["strong"] > disp["weak"]


class TestThresholdCurve:
    def test_root(self, strong_small):
        *_, fit = strong_small
        cuts = threshold_curve(fit, 0.05)
        assert len(cuts) == fit.B
        for j, z in enumerate(cuts, start=1):
            if math.isfinite(z) and z > 0:
                a, _ = null_posterior_and_gradient(z_to_p(z), fit.bin_mode(j))
                assert abs(float(a) - 0.05) <= 1e-8

    def test_never_significant(self):
        fit = _manual_fit([(0.999, 0.99, 2.001)])
        assert threshold_curve(fit, 0.05) == [math.inf]

    def test_monotone_when_pi0_decreases(self, strong_small):
        *_, fit = strong_small
        pi0 = [fit.natural_params(j).pi0 for j in range(1, fit.B + 1)]
        assert all(a > b for a, b in zip(pi0, pi0[1:]))
        cuts = threshold_curve(fit, 0.05)
        assert all(a >= b for a, b in zip(cuts, cuts[1:]))
