"""Per-test posterior probabilities of the null, rankings and significance calls."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, psi

from covmod.binning import quantile_bins
from covmod.errors import ConfigError, FitError, InputError
from covmod.fit import ModelFit, fit_joint, marginal
from covmod.ingest import clip_p, z_to_p
from covmod.mixture import log_beta_norm

Z95 = 1.959963984540054


@dataclass(frozen=True)
class PosteriorScore:
    id: str
    p: float
    x: float
    bin: int
    prob: float
    ci_lo: float
    ci_hi: float
    rank_cov: int


@dataclass(frozen=True)
class RankPair:
    id: str
    rank_cov: int
    rank_onebin: int
    displacement: int


def null_posterior_and_gradient(p, t):
    """``pi0 / f(p)`` and its gradient with respect to the transformed parameters.

    ``p`` may be an array; the gradient then has shape ``(len(p), 3)``.
    """
    a_t, s_t, th_t = (float(v) for v in t)
    pi0, q0 = float(expit(a_t)), float(expit(-a_t))
    xi, xi_c = float(expit(s_t)), float(expit(-s_t))
    et = math.exp(th_t)
    theta = 2.0 + et
    p = np.asarray(p, dtype=float)
    logp, log1mp = np.log(p), np.log1p(-p)
    g = np.exp(log_beta_norm(xi, theta) + (xi - 1.0) * logp + (theta - 1.0) * log1mp)
    f = pi0 + q0 * g
    a = pi0 / f
    gf2 = g / (f * f)
    lx = psi(xi + theta) - psi(xi) + logp
    lt = psi(xi + theta) - psi(theta) + log1mp
    b = np.stack([
        gf2 * pi0 * q0,
        -pi0 * q0 * gf2 * lx * (xi * xi_c),
        -pi0 * q0 * gf2 * lt * et,
    ], axis=-1)
    return a, b


def _interval(a, b, sigma):
    var = np.einsum("...i,ij,...j->...", b, sigma, b)
    half = Z95 * np.sqrt(np.maximum(var, 0.0))
    prob = np.minimum(a, 1.0)
    lo = np.clip(a - half, 0.0, 1.0)
    hi = np.clip(a + half, 0.0, 1.0)
    return prob, np.minimum(lo, prob), np.maximum(hi, prob)


def posterior_prob(p: float, j: int, fit: ModelFit, sigma=None):
    """Posterior probability of the null for p-value ``p`` in bin ``j``.

    Returns ``(prob, ci_lo, ci_hi)``: the probability at the posterior mode
    and a symmetric 95% delta-method interval on the probability scale,
    clipped to [0, 1]. ``sigma`` overrides the bin's covariance block.
    """
    sigma = fit.covariance_block(j) if sigma is None else np.asarray(sigma, dtype=float)
    a, b = null_posterior_and_gradient(p, fit.bin_mode(j))
    prob, lo, hi = _interval(a, b, sigma)
    return float(prob), float(lo), float(hi)


def posterior_curve(fit: ModelFit, j: int, pgrid):
    """Vectorised :func:`posterior_prob` over a p-grid for one bin."""
    a, b = null_posterior_and_gradient(np.asarray(pgrid, float), fit.bin_mode(j))
    return _interval(a, b, fit.covariance_block(j))


def rank_by_prob(prob, p, ids) -> np.ndarray:
    """1-based ranks by ascending prob, ties by ascending p, then id."""
    order = np.lexsort((np.asarray(ids, dtype=str), np.asarray(p), np.asarray(prob)))
    ranks = np.empty(len(order), dtype=np.int64)
    ranks[order] = np.arange(1, len(order) + 1)
    return ranks


def score_arrays(dataset, fit: ModelFit, assignment=None) -> dict:
    """Column-wise scores for every record, in input order."""
    assignment = fit.layout.assignment if assignment is None else np.asarray(assignment)
    if assignment.shape != (dataset.m,):
        raise InputError("bin assignment does not match the dataset")
    prob = np.empty(dataset.m)
    lo = np.empty(dataset.m)
    hi = np.empty(dataset.m)
    for j in np.unique(assignment):
        if not 1 <= j <= fit.B:
            raise FitError(f"record assigned to bin {j}, which has no fitted parameters")
        idx = np.flatnonzero(assignment == j)
        prob[idx], lo[idx], hi[idx] = posterior_curve(fit, int(j), dataset.p[idx])
    return {
        "id": list(dataset.ids),
        "p": np.asarray(dataset.p),
        "x": np.asarray(dataset.x),
        "bin": assignment.astype(np.int64),
        "prob": prob,
        "ci_lo": lo,
        "ci_hi": hi,
        "rank": rank_by_prob(prob, dataset.p, dataset.ids),
    }


def score_all(dataset, fit: ModelFit, assignment=None) -> list:
    cols = score_arrays(dataset, fit, assignment)
    return [
        PosteriorScore(cols["id"][i], float(cols["p"][i]), float(cols["x"][i]), int(cols["bin"][i]),
                       float(cols["prob"][i]), float(cols["ci_lo"][i]), float(cols["ci_hi"][i]),
                       int(cols["rank"][i]))
        for i in range(dataset.m)
    ]


def fit_one_bin(dataset, *, ridge=None) -> ModelFit:
    """The mixture fitted to all p-values at once, ignoring the covariate."""
    layout = quantile_bins(dataset, 1, min_bin_size=1)
    if ridge is None:
        return fit_joint(dataset, layout, 1.0)
    return fit_joint(dataset, layout, 1.0, ridge=ridge)


def pi0_interval(fit: ModelFit, j: int = 1):
    """Estimated ``pi0`` of bin ``j`` with a 95% interval.

    The interval is the Gaussian marginal of ``logit(pi0)`` mapped through
    the logistic function.
    """
    mean, sd = marginal(fit, j, "pi0")
    return float(expit(mean)), float(expit(mean - Z95 * sd)), float(expit(mean + Z95 * sd))


def natural_intervals(fit: ModelFit, j: int):
    """``{name: (estimate, lo, hi)}`` for the natural parameters of bin ``j``."""
    out = {}
    for name, back in (("pi0", expit), ("xi", expit), ("theta", lambda v: 2.0 + np.exp(v))):
        mean, sd = marginal(fit, j, name)
        out[name] = (float(back(mean)), float(back(mean - Z95 * sd)), float(back(mean + Z95 * sd)))
    return out


def storey_pi0(pvec, lam: float = 0.5) -> float:
    """Tail-count estimate ``#{p > lam} / (m (1 - lam))``, truncated at 1."""
    if not 0.0 < lam < 1.0:
        raise ConfigError(f"Storey tuning parameter must lie in (0, 1), got {lam!r}")
    p = np.asarray(pvec, dtype=float)
    if p.size == 0:
        raise InputError("need at least one p-value")
    count = int(np.sum(p > lam))
    if count == 0:
        warnings.warn("no p-values above the tuning parameter; pi0 estimate is degenerate (0)",
                      RuntimeWarning, stacklevel=2)
        return 0.0
    return min(1.0, count / (p.size * (1.0 - lam)))


@dataclass(frozen=True)
class SignificanceCalls:
    flags: np.ndarray
    n_significant: int
    both: int | None = None
    covariate_only: int | None = None
    baseline_only: int | None = None
    neither: int | None = None


def _probs(scores):
    if isinstance(scores, dict):
        return np.asarray(scores["prob"], float), list(scores["id"])
    return np.array([s.prob for s in scores], dtype=float), [s.id for s in scores]


def call_significant(scores, threshold: float = 0.05, baseline=None) -> SignificanceCalls:
    """Flag tests with ``prob < threshold``; optionally cross-tabulate against a baseline."""
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError(f"threshold must lie in [0, 1], got {threshold!r}")
    prob, ids = _probs(scores)
    flags = prob < threshold
    if baseline is None:
        return SignificanceCalls(flags, int(flags.sum()))
    bprob, bids = _probs(baseline)
    if bids != ids:
        pos = {i: k for k, i in enumerate(bids)}
        if set(pos) != set(ids):
            raise InputError("score sets cover different ids")
        bprob = bprob[[pos[i] for i in ids]]
    bflags = bprob < threshold
    return SignificanceCalls(
        flags,
        int(flags.sum()),
        both=int(np.sum(flags & bflags)),
        covariate_only=int(np.sum(flags & ~bflags)),
        baseline_only=int(np.sum(~flags & bflags)),
        neither=int(np.sum(~flags & ~bflags)),
    )


def rank_compare(scores_cov, scores_onebin) -> list:
    """Join two rankings on id; displacement is ``rank_onebin - rank_cov``."""
    cov = {s.id: s.rank_cov for s in scores_cov}
    one = {s.id: s.rank_cov for s in scores_onebin}
    if set(cov) != set(one) or len(cov) != len(scores_cov):
        raise InputError("rank comparison needs identical id sets")
    pairs = [RankPair(i, cov[i], one[i], one[i] - cov[i]) for i in cov]
    pairs.sort(key=lambda r: r.rank_cov)
    return pairs


def threshold_curve(fit: ModelFit, threshold: float = 0.05, null_dist: str = "normal") -> list:
    """Per-bin test-statistic cutoff where the null posterior equals ``threshold``.

    Bisection on ``z`` in [0, 10]; ``math.inf`` marks a bin that never
    reaches the threshold and 0.0 one that is already below it at ``z = 0``.
    """
    out = []
    for j in range(1, fit.B + 1):
        t = fit.bin_mode(j)

        def prob_at(z):
            p = float(clip_p(z_to_p(z, null_dist)))
            a, _ = null_posterior_and_gradient(p, t)
            return float(a)

        lo, hi = 0.0, 10.0
        if prob_at(hi) > threshold:
            out.append(math.inf)
            continue
        if prob_at(lo) <= threshold:
            out.append(0.0)
            continue
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi):
                break
            if prob_at(mid) > threshold:
                lo = mid
            else:
                hi = mid
        out.append(hi)
    return out
