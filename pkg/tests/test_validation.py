import numpy as np
import pytest

from covmod.errors import ConfigError, DiagnosticError
from covmod.fit import RIDGE, bin_data
from covmod.mixture import BinParams
from covmod.validation import (
    GaussianTarget,
    batch_means_mcse,
    density_integral,
    grad_check,
    mcmc_sample,
    normalization_audit,
    run_metropolis,
)


class TestGradCheck:
    def test_random_points(self, strong_small):
        ds, _, layout, fit = strong_small
        data = bin_data(ds, layout)
        rng = np.random.default_rng(0)
        errs = [grad_check(fit.mode + rng.normal(0, 0.5, fit.mode.size), fit.lambdas, data,
                           anchor=fit.init, ridge=fit.ridge) for _ in range(20)]
        assert max(errs) <= 1e-5

    def test_at_mode_reports_guard_regime(self, strong_small):
        ds, _, layout, fit = strong_small
        data = bin_data(ds, layout)
        from covmod.fit import JointPosterior
        g = JointPosterior(data, fit.lambdas, fit.ridge, fit.init).gradient(fit.mode)
        assert np.max(np.abs(g)) <= 1e-8
        # relative error is measured against the 1e-8 guard, so it is large but finite
        assert np.isfinite(grad_check(fit.mode, fit.lambdas, data, anchor=fit.init, ridge=fit.ridge))

    def test_step_stability(self, strong_small):
        ds, _, layout, fit = strong_small
        data = bin_data(ds, layout)
        v = fit.mode + 0.3
        a = grad_check(v, fit.lambdas, data, 1e-5, anchor=fit.init)
        b = grad_check(v, fit.lambdas, data, 2e-5, anchor=fit.init)
        assert max(a, b) / max(min(a, b), 1e-300) < 10

    @pytest.mark.parametrize("step", [1e-8, 1e-2])
    def test_step_range(self, strong_small, step):
        ds, _, layout, fit = strong_small
        with pytest.raises(ConfigError):
            grad_check(fit.mode, fit.lambdas, bin_data(ds, layout), step)


class TestNormalization:
    def test_uniform(self):
        assert density_integral(BinParams(1.0, 0.3, 4.0)) == pytest.approx(1.0, abs=1e-14)

    def test_closed_form(self):
        assert density_integral(BinParams(0.0, 1.0, 2.0)) == pytest.approx(1.0, abs=1e-14)

    def test_audit(self):
        worst, prm = normalization_audit(100, seed=0)
        assert worst <= 1e-6, prm

    def test_hard_corner(self):
        assert abs(density_integral(BinParams(1e-3, 0.05, 250.0)) - 1) <= 1e-6


class TestMetropolis:
    def test_gaussian_target(self):
        mean = np.array([1.0, -2.0, 0.5])
        sd = np.array([0.5, 2.0, 0.1])
        res = run_metropolis(GaussianTarget(mean, sd), np.zeros(3), 20000, 2000, seed=3)
        assert np.all(np.abs(res.mean - mean) <= 3 * res.mcse + 1e-12)
        assert np.all((res.acceptance >= 0.2) & (res.acceptance <= 0.5))

    def test_same_seed_same_chain(self):
        t = GaussianTarget([0.0], [1.0])
        a = run_metropolis(t, [0.0], 2000, 500, seed=11)
        b = run_metropolis(GaussianTarget([0.0], [1.0]), [0.0], 2000, 500, seed=11)
        assert a.samples.tobytes() == b.samples.tobytes()

    def test_bad_acceptance_is_diagnostic(self):
        with pytest.raises(DiagnosticError) as err:
            run_metropolis(GaussianTarget([0.0], [1.0]), [0.0], 300, 0, seed=1, scales=[1e4])
        assert err.value.result is not None

    def test_burn_in_validated(self):
        with pytest.raises(ConfigError):
            run_metropolis(GaussianTarget([0.0], [1.0]), [0.0], 100, 100, seed=1)

    def test_batch_means(self):
        x = np.random.default_rng(0).normal(size=(50000, 2))
        se = batch_means_mcse(x)
        assert np.allclose(se, 1 / np.sqrt(50000), rtol=0.3)

    def test_posterior_short_run(self, strong_small):
        ds, _, layout, fit = strong_small
        res = mcmc_sample(ds, layout, fit.lambdas, 600, 300, seed=2, anchor=fit.init, ridge=RIDGE,
                          start=fit.mode, check=False)
        assert res.samples.shape == (300, fit.mode.size)
        assert np.all(np.isfinite(res.mean))
