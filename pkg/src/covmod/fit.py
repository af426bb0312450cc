"""Joint posterior over all bins and its Gaussian approximation.

The parameter vector is bin-major, ``(pi0_t[1], xi_t[1], theta_t[1], ...,
theta_t[B])``, so the random-walk priors only couple entries three positions
apart and the negative Hessian is a symmetric band matrix of half-bandwidth 3.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from covmod.errors import ConfigError, FitError
from covmod.mixture import (
    DEFAULT_START,
    BinData,
    BinParams,
    TransformedParams,
    bin_grad_hess,
    bin_log_likelihood,
    to_natural,
)

HALF_BANDWIDTH = 3
LAMBDA_CAP = 1e6
RIDGE = 1e-6
RIDGE_MAX = 1e-2
GRAD_TOL = 1e-8
REL_TOL = 1e-12
MAX_ITER = 100
MAX_HALVINGS = 30
# largest Newton move per coordinate in transformed units
MAX_STEP = 5.0

PARAM_NAMES = ("pi0", "xi", "theta")


@dataclass(frozen=True)
class SmoothingParams:
    lambda1: float
    lambda2: float
    lambda3: float
    c: float = 1.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "c"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ConfigError(f"{name} must be positive and finite, got {v!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.lambda1, self.lambda2, self.lambda3])


def _lambda_array(lambdas):
    if lambdas is None:
        return np.zeros(3)
    if isinstance(lambdas, SmoothingParams):
        return lambdas.as_array()
    return np.asarray(lambdas, dtype=float).reshape(3)


def _as_bins(data):
    return [d if isinstance(d, BinData) else BinData(d) for d in data]


# ---------------------------------------------------------------------------
# Newton-Raphson with step halving


@dataclass
class NewtonResult:
    x: np.ndarray
    value: float
    grad: np.ndarray
    iterations: int
    converged: bool
    history: list = field(default_factory=list)
    reason: str = ""


def _newton(x0, evaluate, value, solve, max_iter=MAX_ITER):
    """Maximise with safeguarded Newton steps.

    ``evaluate(x)`` returns ``(value, grad, neg_hess)``, ``value(x)`` the
    objective alone and ``solve(neg_hess, grad, shift)`` the direction for
    ``(neg_hess + shift*I) d = grad``, raising ``LinAlgError`` when the
    shifted matrix is not positive definite. Accepted steps never lower the
    objective.
    """
    x = np.array(x0, dtype=float)
    f, g, nh = evaluate(x)
    if not math.isfinite(f):
        raise FitError(f"objective is not finite at the starting point {x.tolist()}")
    history = [f]
    best = (x.copy(), f, g.copy())
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) <= GRAD_TOL:
            return NewtonResult(x, f, g, it - 1, True, history, "gradient")
        d = _damped_direction(nh, g, solve)
        big = np.max(np.abs(d))
        if big > MAX_STEP:
            d *= MAX_STEP / big
        accepted = False
        step = 1.0
        for _ in range(MAX_HALVINGS + 1):
            x_new = x + step * d
            f_new = value(x_new)
            if math.isfinite(f_new) and f_new >= f:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            predicted = 0.5 * float(g @ d)
            if predicted > REL_TOL * max(1.0, abs(f)):
                return NewtonResult(best[0], best[1], best[2], it, False, history, "stalled")
            x, f, g = _polish(x, f, g, nh, evaluate, solve)
            return NewtonResult(x, f, g, it, True, history, "flat")
        f_old = f
        x = x_new
        f, g, nh = evaluate(x)
        history.append(f)
        best = (x.copy(), f, g.copy())
        if np.max(np.abs(g)) <= GRAD_TOL:
            return NewtonResult(x, f, g, it, True, history, "gradient")
        # full steps keep going: Newton reaches the gradient tolerance quickly
        if step < 1.0 and abs(f - f_old) <= REL_TOL * max(1.0, abs(f)):
            x, f, g = _polish(x, f, g, nh, evaluate, solve)
            return NewtonResult(x, f, g, it, True, history, "relative-change")
    return NewtonResult(best[0], best[1], best[2], max_iter, False, history, "max-iter")


def _polish(x, f, g, nh, evaluate, solve, max_steps=5):
    """Full Newton steps once the objective is flat to rounding.

    Near the optimum of a large sum the gain of a Newton step falls below
    the spacing of doubles at ``f``, so the ascent test cannot see it. Steps
    are kept while they shrink the gradient and cost no more than rounding
    in the objective.
    """
    tol = 1e-13 * max(1.0, abs(f))
    for _ in range(max_steps):
        if np.max(np.abs(g)) <= GRAD_TOL:
            break
        try:
            d = solve(nh, g, 0.0)
        except linalg.LinAlgError:
            break
        f_new, g_new, nh_new = evaluate(x + d)
        if not (f_new >= f - tol and np.max(np.abs(g_new)) < np.max(np.abs(g))):
            break
        x, f, g, nh = x + d, f_new, g_new, nh_new
    return x, f, g


def _damped_direction(nh, g, solve):
    try:
        return solve(nh, g, 0.0)
    except linalg.LinAlgError:
        pass
    scale = max(1.0, float(np.max(np.abs(_diag(nh)))))
    shift = 1e-8 * scale
    while shift < 1e12 * scale:
        try:
            return solve(nh, g, shift)
        except linalg.LinAlgError:
            shift *= 10.0
    # steepest ascent as a last resort
    return g / scale


def _diag(nh):
    return nh[-1] if nh.ndim == 2 and nh.shape[0] == HALF_BANDWIDTH + 1 else np.diag(nh)


def _dense_solve(nh, g, shift):
    a = nh + shift * np.eye(nh.shape[0])
    c = linalg.cholesky(a, lower=True, check_finite=False)
    return linalg.cho_solve((c, True), g, check_finite=False)


def _banded_solve(ab, g, shift):
    if shift:
        ab = ab.copy()
        ab[-1] += shift
    cb = linalg.cholesky_banded(ab, lower=False, check_finite=False)
    return linalg.cho_solve_banded((cb, False), g, check_finite=False)


# ---------------------------------------------------------------------------
# Stage 1: one bin at a time


@dataclass(frozen=True)
class BinFitInfo:
    iterations: int
    converged: bool
    log_likelihood: float
    grad_norm: float


def fit_bin_initial(pvec, warm_start: TransformedParams | None = None, *, return_info=False,
                    max_iter=MAX_ITER):
    """Maximise one bin's log-likelihood by Newton-Raphson.

    Starts from ``warm_start`` or from ``(1, 0, 0)`` in transformed
    coordinates. Non-convergence is reported through the info record
    (``return_info=True``) rather than raised; the best iterate is returned.
    """
    data = pvec if isinstance(pvec, BinData) else BinData(pvec)
    start = (warm_start or DEFAULT_START).as_array()

    def evaluate(v):
        g, h, f = bin_grad_hess(data, v, with_value=True)
        return f, g, -h

    res = _newton(start, evaluate, lambda v: bin_log_likelihood(data, v), _dense_solve, max_iter)
    t = TransformedParams.from_array(res.x)
    if return_info:
        return t, BinFitInfo(res.iterations, res.converged, res.value, float(np.max(np.abs(res.grad))))
    return t


# ---------------------------------------------------------------------------
# Smoothing parameters


def estimate_lambdas(initial, c: float = 1.0) -> SmoothingParams:
    """Inverse mean squared first difference of each preliminary chain, times ``c``.

    ``lambda_k = c * B / sum_j (v[j, k] - v[j-1, k])**2``, capped at 1e6.
    """
    v = np.array([t.as_array() if isinstance(t, TransformedParams) else np.asarray(t, float)
                  for t in initial])
    B = v.shape[0]
    if B < 2:
        raise ConfigError("smoothing needs at least two bins; B = 1 is the one-bin model")
    if not (c > 0 and math.isfinite(c)):
        raise ConfigError(f"smoothing scale c must be positive, got {c!r}")
    ss = np.sum(np.diff(v, axis=0) ** 2, axis=0)
    lam = []
    for s in ss:
        # c applied last so scaling by c is exact below the cap
        val = c * (B / s) if s > 0 else math.inf
        lam.append(min(val, LAMBDA_CAP))
    return SmoothingParams(lam[0], lam[1], lam[2], c)


# ---------------------------------------------------------------------------
# Joint log posterior


class JointPosterior:
    """Log posterior over all bins: likelihoods, random-walk priors, ridge.

    The ridge ``-(ridge / 2) * ||v - anchor||^2`` is dropped when ``anchor``
    is ``None``.
    """

    def __init__(self, data, lambdas=None, ridge=RIDGE, anchor=None):
        self.bins = _as_bins(data)
        self.B = len(self.bins)
        self.lam = _lambda_array(lambdas)
        self.ridge = float(ridge) if anchor is not None else 0.0
        self.anchor = None if anchor is None else np.asarray(anchor, dtype=float).copy()
        self.n = 3 * self.B

    def _prior_and_ridge(self, v):
        V = v.reshape(self.B, 3)
        dv = np.diff(V, axis=0)
        val = -0.5 * float(np.sum(self.lam * np.sum(dv * dv, axis=0)))
        if self.anchor is not None:
            r = v - self.anchor
            val -= 0.5 * self.ridge * float(r @ r)
        return val

    def value(self, v) -> float:
        v = np.asarray(v, dtype=float)
        V = v.reshape(self.B, 3)
        ll = sum(bin_log_likelihood(b, V[j]) for j, b in enumerate(self.bins))
        return ll + self._prior_and_ridge(v)

    def _bin_terms(self, v):
        V = v.reshape(self.B, 3)
        out = [bin_grad_hess(b, V[j], with_value=True) for j, b in enumerate(self.bins)]
        return V, out

    def gradient(self, v) -> np.ndarray:
        return self.evaluate(v)[1]

    def _prior_grad(self, V):
        G = np.zeros_like(V)
        if self.B > 1:
            dv = np.diff(V, axis=0) * self.lam
            G[:-1] += dv
            G[1:] -= dv
        return G

    def evaluate(self, v):
        """Value, gradient and banded negative Hessian (upper LAPACK storage)."""
        v = np.asarray(v, dtype=float)
        V, terms = self._bin_terms(v)
        u = HALF_BANDWIDTH
        ab = np.zeros((u + 1, self.n))
        grad = np.empty(self.n)
        ll = 0.0
        for j, (g, h, f) in enumerate(terms):
            o = 3 * j
            ll += f
            grad[o:o + 3] = g
            for r in range(3):
                for c in range(r, 3):
                    ab[u + r - c, o + c] = -h[r, c]
        grad += self._prior_grad(V).ravel()
        if self.B > 1:
            lam = np.tile(self.lam, self.B)
            deg = np.full(self.n, 2.0)
            deg[:3] = 1.0
            deg[-3:] = 1.0
            ab[u] += lam * deg
            ab[0, 3:] -= lam[3:]
        if self.anchor is not None:
            grad -= self.ridge * (v - self.anchor)
            ab[u] += self.ridge
        value = ll + self._prior_and_ridge(v)
        return value, grad, ab

    def dense_hessian(self, v) -> np.ndarray:
        """Hessian assembled densely as block-diagonal likelihood minus Kronecker prior."""
        v = np.asarray(v, dtype=float)
        _, terms = self._bin_terms(v)
        H = linalg.block_diag(*[h for _, h, _ in terms])
        if self.B > 1:
            D = np.diff(np.eye(self.B), axis=0)
            H -= np.kron(D.T @ D, np.diag(self.lam))
        if self.anchor is not None:
            H -= self.ridge * np.eye(self.n)
        return H


def log_posterior(v, lambdas, data, anchor=None, ridge=RIDGE) -> float:
    """Joint log posterior up to a constant (see :class:`JointPosterior`)."""
    return JointPosterior(data, lambdas, ridge, anchor).value(v)


def banded_to_dense(ab) -> np.ndarray:
    u = ab.shape[0] - 1
    n = ab.shape[1]
    A = np.zeros((n, n))
    for k in range(u + 1):
        off = u - k
        idx = np.arange(off, n)
        A[idx - off, idx] = ab[k, off:]
        A[idx, idx - off] = ab[k, off:]
    return A


# ---------------------------------------------------------------------------
# Fit result


@dataclass(frozen=True, eq=False)
class ModelFit:
    layout: object
    mode: np.ndarray
    precision_banded: np.ndarray
    covariance_blocks: np.ndarray
    lambdas: SmoothingParams | None
    c: float
    ridge: float
    init: np.ndarray
    log_post_at_mode: float
    iterations: int
    converged: bool
    grad_norm: float
    stage1_converged: tuple = ()
    ridge_escalations: int = 0
    history: tuple = ()

    @property
    def B(self) -> int:
        return self.mode.size // 3

    def bin_mode(self, j: int) -> np.ndarray:
        """Transformed parameters of bin ``j`` (1-based)."""
        self._check_bin(j)
        return self.mode[3 * (j - 1):3 * j].copy()

    def natural_params(self, j: int) -> BinParams:
        return to_natural(self.bin_mode(j))

    def covariance_block(self, j: int) -> np.ndarray:
        self._check_bin(j)
        return self.covariance_blocks[j - 1]

    def precision(self) -> np.ndarray:
        return banded_to_dense(self.precision_banded)

    def _check_bin(self, j):
        if not 1 <= int(j) <= self.B:
            raise IndexError(f"bin {j} out of range 1..{self.B}")

    def to_dict(self) -> dict:
        return {
            "B": self.B,
            "mode": [float(v) for v in self.mode],
            "init": [float(v) for v in self.init],
            "natural": [list(self.natural_params(j).as_tuple()) for j in range(1, self.B + 1)],
            "covariance_blocks": self.covariance_blocks.tolist(),
            "precision_banded": self.precision_banded.tolist(),
            "lambdas": None if self.lambdas is None else list(self.lambdas.as_array()),
            "c": self.c,
            "ridge": self.ridge,
            "ridge_escalations": self.ridge_escalations,
            "log_post_at_mode": self.log_post_at_mode,
            "iterations": self.iterations,
            "converged": self.converged,
            "grad_norm": self.grad_norm,
            "stage1_converged": list(self.stage1_converged),
        }

    @classmethod
    def from_dict(cls, d: dict, layout) -> "ModelFit":
        lam = d.get("lambdas")
        return cls(
            layout=layout,
            mode=np.array(d["mode"], dtype=float),
            precision_banded=np.array(d["precision_banded"], dtype=float),
            covariance_blocks=np.array(d["covariance_blocks"], dtype=float).reshape(-1, 3, 3),
            lambdas=None if lam is None else SmoothingParams(*lam, c=d["c"]),
            c=float(d["c"]),
            ridge=float(d["ridge"]),
            init=np.array(d["init"], dtype=float),
            log_post_at_mode=float(d["log_post_at_mode"]),
            iterations=int(d["iterations"]),
            converged=bool(d["converged"]),
            grad_norm=float(d["grad_norm"]),
            stage1_converged=tuple(d.get("stage1_converged", ())),
            ridge_escalations=int(d.get("ridge_escalations", 0)),
        )


def covariance_blocks_from_precision(ab) -> np.ndarray:
    """Per-bin 3x3 diagonal blocks of the inverse of a banded SPD matrix."""
    cb = linalg.cholesky_banded(ab, lower=False, check_finite=False)
    n = ab.shape[1]
    B = n // 3
    if n <= 3000:
        inv = linalg.cho_solve_banded((cb, False), np.eye(n), check_finite=False)
        blocks = np.array([inv[3 * j:3 * j + 3, 3 * j:3 * j + 3] for j in range(B)])
    else:
        blocks = np.empty((B, 3, 3))
        for j in range(B):
            e = np.zeros((n, 3))
            e[3 * j:3 * j + 3] = np.eye(3)
            blocks[j] = linalg.cho_solve_banded((cb, False), e, check_finite=False)[3 * j:3 * j + 3]
    return 0.5 * (blocks + np.transpose(blocks, (0, 2, 1)))


def bin_data(dataset, layout):
    return [BinData(dataset.p[layout.assignment == j]) for j in range(1, layout.B + 1)]


def fit_joint(dataset, layout, c: float = 1.0, *, ridge=RIDGE, max_iter=MAX_ITER) -> ModelFit:
    """Two-stage fit of the smoothed B-bin model and its Gaussian approximation.

    Stage 1 fits each bin on its own, warm-starting every bin from the
    previous one. The smoothing parameters are then estimated once from
    those preliminary values, and stage 2 maximises the joint log posterior
    from them with banded Newton steps. The precision at the mode is the
    negative Hessian including the ridge; if it is not positive definite the
    ridge is raised tenfold (up to 1e-2) and the optimisation resumed.
    """
    if layout.assignment.shape != (dataset.m,):
        raise ConfigError("layout does not match dataset size")
    if not (c > 0 and math.isfinite(c)):
        raise ConfigError(f"smoothing scale c must be positive, got {c!r}")
    bins = bin_data(dataset, layout)
    if any(len(b) == 0 for b in bins):
        raise ConfigError("layout has an empty bin")

    inits = []
    s1_ok = []
    prev = None
    for b in bins:
        t, info = fit_bin_initial(b, prev, return_info=True, max_iter=max_iter)
        inits.append(t)
        s1_ok.append(info.converged)
        prev = t
    v0 = np.concatenate([t.as_array() for t in inits])
    lambdas = estimate_lambdas(inits, c) if layout.B >= 2 else None

    escalations = 0
    x = v0
    total_iter = 0
    history = []
    while True:
        post = JointPosterior(bins, lambdas, ridge, anchor=v0)
        res = _newton(x, post.evaluate, post.value, _banded_solve, max_iter)
        total_iter += res.iterations
        history.extend(res.history)
        _, grad, ab = post.evaluate(res.x)
        try:
            cov = covariance_blocks_from_precision(ab)
            break
        except linalg.LinAlgError:
            if ridge * 10 > RIDGE_MAX * (1 + 1e-9):
                raise FitError(
                    f"precision not positive definite at ridge {ridge:g}; iterate {res.x.tolist()}"
                ) from None
            ridge *= 10
            escalations += 1
            x = res.x

    return ModelFit(
        layout=layout,
        mode=res.x,
        precision_banded=ab,
        covariance_blocks=cov,
        lambdas=lambdas,
        c=float(c),
        ridge=float(ridge),
        init=v0,
        log_post_at_mode=res.value,
        iterations=total_iter,
        converged=res.converged,
        grad_norm=float(np.max(np.abs(grad))),
        stage1_converged=tuple(s1_ok),
        ridge_escalations=escalations,
        history=tuple(history),
    )


def marginal(fit: ModelFit, j: int, which) -> tuple:
    """Gaussian marginal ``(mean, sd)`` of one transformed parameter of bin ``j``."""
    k = PARAM_NAMES.index(which) if isinstance(which, str) else int(which)
    if not 0 <= k < 3:
        raise ValueError(f"unknown parameter {which!r}")
    mean = float(fit.bin_mode(j)[k])
    sd = math.sqrt(float(fit.covariance_block(j)[k, k]))
    return mean, sd
