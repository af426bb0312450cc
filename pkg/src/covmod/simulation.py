"""Simulated p-values with a parametric covariate-modulation curve.

Covariates are uniform on [0, 1]; test ``i`` is null with probability
``pi0(x_i) = exp(-alpha - (beta - alpha) x_i**gamma)``; null statistics are
N(0, 1), alternatives N(mu, 1), and p-values are upper-tail normal.

Under this generator the exact posterior probability of the null is
``pi0 phi(z) / (pi0 phi(z) + (1 - pi0) phi(z - mu))`` with
``z = Phi^{-1}(1 - p)``, because the alternative p-value density is the
likelihood ratio ``phi(z - mu) / phi(z) = exp(mu z - mu**2 / 2)``.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy import integrate, stats

from covmod.binning import quantile_bins
from covmod.errors import ConfigError, CovmodError
from covmod.fit import fit_joint
from covmod.ingest import Dataset, clip_p
from covmod.report import fit_one_bin, null_posterior_and_gradient

REFERENCE_CONFIGS = {
    "weak": (0.5, 0.55, 0.45),
    "weak-high": (0.9, 0.95, 0.85),
    "strong": (0.5, 0.9, 0.1),
}
P_GRID = np.linspace(0.001, 0.1, 101)
GAMMA_BRACKET = (1e-3, 1e3)


@dataclass(frozen=True)
class SimConfig:
    m: int = 30000
    pibar0: float = 0.5
    pi0_at_0: float = 0.55
    pi0_at_1: float = 0.45
    mu: float = 2.0
    B: int = 10
    c: float = 1.0
    seed: int = 0

    def validate(self):
        if self.m < 1:
            raise ConfigError("m must be positive")
        for name in ("pibar0", "pi0_at_0", "pi0_at_1"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {v!r}")
        if not self.pi0_at_0 > self.pi0_at_1:
            raise ConfigError("only decreasing modulation curves are supported (pi0_at_0 > pi0_at_1)")
        if not self.pi0_at_1 < self.pibar0 < self.pi0_at_0:
            raise ConfigError(
                f"pibar0={self.pibar0} must lie strictly between {self.pi0_at_1} and {self.pi0_at_0}"
            )
        return self

    @property
    def alpha(self):
        return -math.log(self.pi0_at_0)

    @property
    def beta(self):
        return -math.log(self.pi0_at_1)

    @property
    def gamma(self):
        return _cached_gamma(self.pibar0, self.pi0_at_0, self.pi0_at_1)

    def pi0(self, x):
        return pi0_curve(x, self.alpha, self.beta, self.gamma)


@dataclass(frozen=True)
class SimTruth:
    is_null: np.ndarray
    true_posterior: np.ndarray


def pi0_curve(x, alpha, beta, gamma):
    """Covariate-modulation curve ``exp(-alpha - (beta - alpha) x**gamma)``.

    Equals ``exp(-alpha)`` at 0 and ``exp(-beta)`` at 1; decreasing when ``beta > alpha``.
    """
    x = np.asarray(x, dtype=float)
    out = np.exp(-alpha - (beta - alpha) * x ** gamma)
    return float(out) if out.ndim == 0 else out


def curve_mean(alpha, beta, gamma):
    val, _ = integrate.quad(lambda x: math.exp(-alpha - (beta - alpha) * x ** gamma), 0.0, 1.0,
                            epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


def solve_gamma(pibar0, pi0_at_0, pi0_at_1) -> float:
    """Shape ``gamma`` making the curve average ``pibar0`` over [0, 1].

    The mean rises monotonically in ``gamma`` from ``pi0_at_1`` (gamma -> 0)
    to ``pi0_at_0`` (gamma -> inf) for a decreasing curve, so bisection on
    ``log gamma`` over [1e-3, 1e3] finds it.
    """
    if pi0_at_0 == pi0_at_1:
        raise ConfigError("equal endpoints leave gamma undetermined")
    if not (0 < pi0_at_1 < 1 and 0 < pi0_at_0 < 1):
        raise ConfigError("curve endpoints must lie in (0, 1)")
    lo_end, hi_end = sorted((pi0_at_0, pi0_at_1))
    if not lo_end < pibar0 < hi_end:
        raise ConfigError(f"target mean {pibar0} is outside ({lo_end}, {hi_end})")
    alpha, beta = -math.log(pi0_at_0), -math.log(pi0_at_1)
    # the curve decreases when beta > alpha; the mean then rises with gamma
    sign = 1.0 if beta > alpha else -1.0

    def resid(lg):
        return sign * (curve_mean(alpha, beta, math.exp(lg)) - pibar0)

    lo, hi = math.log(GAMMA_BRACKET[0]), math.log(GAMMA_BRACKET[1])
    r_lo, r_hi = resid(lo), resid(hi)
    if r_lo > 0 or r_hi < 0:
        raise ConfigError(f"target mean {pibar0} needs gamma outside {GAMMA_BRACKET}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        r = resid(mid)
        if abs(r) <= 1e-13 or mid in (lo, hi):
            return math.exp(mid)
        if r < 0:
            lo = mid
        else:
            hi = mid
    return math.exp(0.5 * (lo + hi))


_GAMMA_CACHE: dict = {}


def _cached_gamma(pibar0, a0, a1):
    key = (pibar0, a0, a1)
    if key not in _GAMMA_CACHE:
        _GAMMA_CACHE[key] = solve_gamma(pibar0, a0, a1)
    return _GAMMA_CACHE[key]


def replicate_seed(base: int, r: int) -> int:
    """Independent 64-bit seed for replicate ``r`` derived from ``base``."""
    ss = np.random.SeedSequence([int(base) & (2**64 - 1), int(r)])
    return int(ss.generate_state(1, np.uint64)[0])


def simulate(config: SimConfig):
    """Generate one dataset and its ground truth; deterministic in ``config.seed``."""
    config.validate()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(config.seed))))
    m = config.m
    x = rng.random(m)
    pi0 = config.pi0(x)
    is_null = rng.random(m) < pi0
    z = rng.standard_normal(m) + np.where(is_null, 0.0, config.mu)
    p = clip_p(stats.norm.sf(z))
    width = len(str(m))
    ids = tuple(f"t{i:0{width}d}" for i in range(1, m + 1))
    ds = Dataset(ids, p, x, z)
    truth = SimTruth(is_null, true_posterior(p, x, config))
    return ds, truth


def true_posterior(p, x, config: SimConfig):
    """Exact posterior probability of the null under the simulation generator."""
    p = np.asarray(p, dtype=float)
    pi0 = np.asarray(config.pi0(x), dtype=float)
    z = stats.norm.isf(p)
    mu = config.mu
    # log likelihood ratio alternative / null
    llr = mu * z - 0.5 * mu * mu
    out = 1.0 / (1.0 + (1.0 - pi0) / pi0 * np.exp(llr))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ReplicateCurves:
    seed: int
    covariate: np.ndarray  # (B, len(grid))
    onebin: np.ndarray  # (len(grid),)
    onebin_pi0: float
    bin_pi0: np.ndarray


def run_replicate(config: SimConfig, seed: int, pgrid=P_GRID) -> ReplicateCurves:
    """Simulate with ``seed`` and evaluate both fitted posterior curves on ``pgrid``."""
    cfg = replace(config, seed=seed)
    ds, _ = simulate(cfg)
    layout = quantile_bins(ds, cfg.B, min_bin_size=1)
    fit = fit_joint(ds, layout, cfg.c)
    one = fit_one_bin(ds)
    cov = np.array([null_posterior_and_gradient(pgrid, fit.bin_mode(j))[0]
                    for j in range(1, cfg.B + 1)])
    onec = null_posterior_and_gradient(pgrid, one.bin_mode(1))[0]
    return ReplicateCurves(seed, cov, onec, fit_one_bin_pi0(one),
                           np.array([fit.natural_params(j).pi0 for j in range(1, cfg.B + 1)]))


def fit_one_bin_pi0(fit):
    return fit.natural_params(1).pi0


def _run_safe(args):
    config, seed, pgrid = args
    try:
        return run_replicate(config, seed, pgrid)
    except CovmodError as exc:
        return exc


@dataclass
class ReplicateSummary:
    config: SimConfig
    pgrid: np.ndarray
    midpoints: np.ndarray
    truth: np.ndarray  # (B, G)
    quantiles: dict  # method -> (3, B, G) array of q05, median, q95
    replicates: list
    failures: int

    def curve_error(self, method: str, bins) -> dict:
        """Mean absolute deviation of the median curve from truth, per 1-based bin."""
        med = self.quantiles[method][1]
        return {j: float(np.mean(np.abs(med[j - 1] - self.truth[j - 1]))) for j in bins}

    def rows(self):
        """``(method, bin, p, truth, q05, median, q95)`` tuples in a fixed order."""
        for method in ("covariate", "onebin"):
            q = self.quantiles[method]
            for j in range(self.truth.shape[0]):
                for g, p in enumerate(self.pgrid):
                    yield (method, j + 1, float(p), float(self.truth[j, g]),
                           float(q[0, j, g]), float(q[1, j, g]), float(q[2, j, g]))


def replicate_summary(config: SimConfig, R: int, *, seeds=None, jobs: int = 1,
                      pgrid=P_GRID) -> ReplicateSummary:
    """Fit ``R`` simulated replicates and summarise the posterior curves.

    Replicate ``r`` uses ``replicate_seed(config.seed, r)`` unless explicit
    ``seeds`` are given. Fits that fail are dropped and counted. Quantiles
    (5%, 50%, 95%) are pointwise across the surviving replicates.
    """
    config.validate()
    if seeds is None:
        if R < 2:
            raise ConfigError("replicate summaries need R >= 2")
        seeds = [replicate_seed(config.seed, r) for r in range(R)]
    seeds = list(seeds)
    pgrid = np.asarray(pgrid, dtype=float)
    tasks = [(config, s, pgrid) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_safe, tasks))
    else:
        results = [_run_safe(t) for t in tasks]
    reps = [r for r in results if isinstance(r, ReplicateCurves)]
    failures = len(results) - len(reps)
    if not reps:
        raise CovmodError("every replicate fit failed")

    B = config.B
    mids = (np.arange(1, B + 1) - 0.5) / B
    truth = np.array([true_posterior(pgrid, np.full_like(pgrid, xm), config) for xm in mids])
    cov = np.stack([r.covariate for r in reps])
    one = np.stack([np.broadcast_to(r.onebin, (B, pgrid.size)) for r in reps])
    qs = (0.05, 0.5, 0.95)
    quant = {
        "covariate": np.quantile(cov, qs, axis=0),
        "onebin": np.quantile(one, qs, axis=0),
    }
    return ReplicateSummary(config, pgrid, mids, truth, quant, reps, failures)


def config_header(config: SimConfig) -> list:
    d = asdict(config)
    d["gamma"] = config.gamma
    d["alpha"] = config.alpha
    d["beta"] = config.beta
    return [f"# {k}={v!r}" for k, v in d.items()]
