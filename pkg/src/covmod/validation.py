"""Independent numerical cross-checks: finite differences, quadrature, MCMC."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats
from scipy.special import expit

from covmod import kernels
from covmod.errors import ConfigError, DiagnosticError
from covmod.fit import JointPosterior, RIDGE, _lambda_array, bin_data
from covmod.mixture import BinParams, mix_density, to_natural
from covmod.report import null_posterior_and_gradient

GUARD = 1e-8


def _rel_err(numeric, analytic):
    return np.abs(numeric - analytic) / np.maximum(np.abs(analytic), GUARD)


def grad_check(point, lambdas, data, step: float = 1e-5, *, anchor=None, ridge=RIDGE) -> float:
    """Max componentwise relative error of the analytic joint gradient against central differences."""
    if not 1e-7 <= step <= 1e-3:
        raise ConfigError(f"finite-difference step must lie in [1e-7, 1e-3], got {step!r}")
    post = JointPosterior(data, lambdas, ridge, anchor)
    v = np.asarray(point, dtype=float)
    analytic = post.gradient(v)
    numeric = np.empty_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = step
        numeric[i] = (post.value(v + e) - post.value(v - e)) / (2 * step)
    return float(np.max(_rel_err(numeric, analytic)))


def _alt_posterior(p, t):
    """``1 - pi0 / f(p)``, evaluated without cancellation as ``(1 - pi0) g / f``."""
    a_t, s_t, th_t = (float(v) for v in t)
    prm = to_natural(np.array([a_t, s_t, th_t]))
    alt = float(expit(-a_t)) * float(stats.beta.pdf(p, prm.xi, prm.theta))
    return alt / (prm.pi0 + alt)


def delta_grad_check(p, t, step: float = 1e-5) -> float:
    """Same check for the gradient of ``pi0 / f(p)`` used by the delta method.

    When the probability is above 1/2 the differences are taken on its
    complement, which is computed without cancellation; otherwise rounding
    in a value near 1 swamps gradients of order 1e-10.
    """
    t = np.asarray(t, dtype=float)
    a, b = null_posterior_and_gradient(p, t)
    if float(a) > 0.5:
        fun, sign = (lambda v: _alt_posterior(p, v)), -1.0
    else:
        fun, sign = (lambda v: float(null_posterior_and_gradient(p, v)[0])), 1.0
    numeric = np.empty(3)
    for i in range(3):
        e = np.zeros(3)
        e[i] = step
        numeric[i] = sign * (fun(t + e) - fun(t - e)) / (2 * step)
    return float(np.max(_rel_err(numeric, np.asarray(b).reshape(3))))


# ---------------------------------------------------------------------------
# density normalisation

SPLIT = 1e-3


def density_integral(params: BinParams) -> float:
    """Integral of the mixture density over [0, 1] by adaptive quadrature.

    On [0, 1e-3] the constant ``pi0`` is integrated exactly and the
    remainder, carrying the algebraic singularity ``p**(xi - 1)``, goes to
    QUADPACK's algebraic-weight rule so the integrand it sees is smooth.
    """
    a = params.xi - 1.0
    pi0 = params.pi0

    def near_zero(p):
        # the integrand tends to a finite limit at 0; avoid overflow of p**(xi - 1)
        p = max(p, 1e-100)
        return (float(mix_density(p, params)) - pi0) * p ** (-a)

    head, _ = integrate.quad(near_zero, 0.0, SPLIT, weight="alg", wvar=(a, 0.0),
                             epsabs=1e-12, epsrel=1e-11, limit=200)
    head += pi0 * SPLIT
    tail, _ = integrate.quad(lambda p: float(mix_density(p, params)), SPLIT, 1.0,
                             epsabs=1e-11, epsrel=1e-10, limit=200)
    return head + tail


def random_params(rng, n):
    """``n`` random parameter triples inside the convex, nonincreasing region."""
    return [
        BinParams(float(rng.uniform(0.0, 1.0)), float(rng.uniform(0.05, 1.0)),
                  float(2.0 + rng.exponential(10.0)))
        for _ in range(n)
    ]


def normalization_audit(n_cases: int = 100, seed: int = 0, cases=None):
    """Worst ``|integral - 1|`` over random parameter triples.

    Returns ``(worst_deviation, worst_params)``.
    """
    rng = np.random.default_rng(seed)
    cases = random_params(rng, n_cases) if cases is None else list(cases)
    worst, worst_params = -1.0, None
    for prm in cases:
        dev = abs(density_integral(prm) - 1.0)
        if dev > worst:
            worst, worst_params = dev, prm
    return worst, worst_params


# ---------------------------------------------------------------------------
# random-walk Metropolis


class GaussianTarget:
    """Independent Gaussian target, for calibrating the sampler."""

    def __init__(self, mean, sd):
        self.mean = np.asarray(mean, dtype=float)
        self.prec = 1.0 / np.asarray(sd, dtype=float) ** 2

    def start(self, x):
        self.x = np.array(x, dtype=float)

    def delta(self, i, y):
        m, q = self.mean[i], self.prec[i]
        return -0.5 * q * ((y - m) ** 2 - (self.x[i] - m) ** 2)

    def accept(self, i, y):
        self.x[i] = y


class PosteriorTarget:
    """Joint log posterior with cached per-bin log-likelihoods for single-site updates."""

    def __init__(self, data, lambdas, anchor, ridge=RIDGE):
        self.bins = data
        self.B = len(data)
        self.lam = _lambda_array(lambdas)
        self.anchor = np.asarray(anchor, dtype=float)
        self.ridge = float(ridge)

    def _ll(self, j, a, s, t):
        pi0 = 1.0 / (1.0 + math.exp(-a))
        q0 = 1.0 / (1.0 + math.exp(a))
        xi = 1.0 / (1.0 + math.exp(-s))
        theta = 2.0 + math.exp(t)
        lognorm = math.lgamma(xi + theta) - math.lgamma(xi) - math.lgamma(theta)
        b = self.bins[j]
        return kernels.loglik(b.logp, b.log1mp, pi0, q0, xi, theta, lognorm)

    def start(self, x):
        self.x = np.array(x, dtype=float)
        V = self.x.reshape(self.B, 3)
        self.ll = [self._ll(j, *V[j]) for j in range(self.B)]
        self._pending = None

    def delta(self, i, y):
        j, k = divmod(i, 3)
        x = self.x
        cur = x[3 * j:3 * j + 3].copy()
        old = cur[k]
        cur[k] = y
        ll_new = self._ll(j, *cur)
        self._pending = (i, ll_new)
        d = ll_new - self.ll[j]
        lam = self.lam[k]
        if lam:
            if j > 0:
                nb = x[i - 3]
                d -= 0.5 * lam * ((y - nb) ** 2 - (old - nb) ** 2)
            if j < self.B - 1:
                nb = x[i + 3]
                d -= 0.5 * lam * ((y - nb) ** 2 - (old - nb) ** 2)
        a = self.anchor[i]
        d -= 0.5 * self.ridge * ((y - a) ** 2 - (old - a) ** 2)
        return d

    def accept(self, i, y):
        j = i // 3
        pi, ll_new = self._pending
        assert pi == i
        self.ll[j] = ll_new
        self.x[i] = y


@dataclass
class McmcResult:
    mean: np.ndarray
    mcse: np.ndarray
    acceptance: np.ndarray
    scales: np.ndarray
    samples: np.ndarray
    seed: int

    @property
    def ok(self) -> bool:
        return bool(np.all((self.acceptance >= 0.05) & (self.acceptance <= 0.8)))


ADAPT_WINDOW = 50
TARGET_ACCEPT = 0.35


def batch_means_mcse(samples, n_batches: int = 50) -> np.ndarray:
    n = samples.shape[0]
    size = n // n_batches
    if size < 1:
        raise ConfigError("too few samples for batch means")
    means = samples[: size * n_batches].reshape(n_batches, size, -1).mean(axis=1)
    return means.std(axis=0, ddof=1) / math.sqrt(n_batches)


def run_metropolis(target, x0, iters: int, burn_in: int, seed: int, scales=None,
                   check: bool = True) -> McmcResult:
    """Single-site random-walk Metropolis; one iteration is a sweep over all components.

    Proposal scales adapt per component during burn-in towards an acceptance
    rate of 0.35 and are frozen afterwards; only post-burn-in sweeps are kept.
    """
    if not 0 <= burn_in < iters:
        raise ConfigError("need 0 <= burn_in < iters")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    scales = np.full(n, 0.1) if scales is None else np.array(scales, dtype=float)
    target.start(x0)
    x = target.x
    kept = iters - burn_in
    samples = np.empty((kept, n))
    acc_window = np.zeros(n)
    acc_kept = np.zeros(n)
    for it in range(iters):
        noise = rng.standard_normal(n)
        logu = np.log(rng.random(n))
        for i in range(n):
            y = x[i] + scales[i] * noise[i]
            if logu[i] < target.delta(i, y):
                target.accept(i, y)
                if it < burn_in:
                    acc_window[i] += 1
                else:
                    acc_kept[i] += 1
        if it < burn_in:
            if (it + 1) % ADAPT_WINDOW == 0:
                rate = acc_window / ADAPT_WINDOW
                scales *= np.exp(2.0 * (rate - TARGET_ACCEPT))
                acc_window[:] = 0
        else:
            samples[it - burn_in] = x
    result = McmcResult(samples.mean(axis=0), batch_means_mcse(samples), acc_kept / kept,
                        scales, samples, int(seed))
    if check and not result.ok:
        raise DiagnosticError(
            f"acceptance rates outside [0.05, 0.8]: {np.round(result.acceptance, 3).tolist()}",
            result,
        )
    return result


def mcmc_sample(dataset, layout, lambdas, iters: int, burn_in: int, seed: int, *, anchor,
                ridge=RIDGE, start=None, scales=None, check=True) -> McmcResult:
    """Sample the ridge-augmented joint posterior of the transformed parameters."""
    data = bin_data(dataset, layout)
    target = PosteriorTarget(data, lambdas, anchor, ridge)
    x0 = np.asarray(anchor if start is None else start, dtype=float)
    return run_metropolis(target, x0, iters, burn_in, seed, scales, check)


def mcmc_vs_fit(dataset, fit, iters=50000, burn_in=10000, seed=0):
    """MCMC cross-check of a fitted model's Gaussian approximation.

    Returns ``(result, deviations, tolerances)`` for the ``logit(pi0)`` of every bin.
    """
    sd = np.sqrt(np.concatenate([np.diag(fit.covariance_block(j)) for j in range(1, fit.B + 1)]))
    res = mcmc_sample(dataset, fit.layout, fit.lambdas, iters, burn_in, seed, anchor=fit.init,
                      ridge=fit.ridge, start=fit.mode, scales=2.4 * sd)
    idx = np.arange(0, fit.mode.size, 3)
    dev = np.abs(res.mean[idx] - fit.mode[idx])
    tol = np.maximum(0.05, 3 * res.mcse[idx])
    return res, dev, tol
