"""Uniform-beta mixture density for one bin and its transformed-coordinate derivatives.

Natural parameters are ``(pi0, xi, theta)`` with ``pi0`` in (0, 1), ``xi`` in
(0, 1] and ``theta >= 2``; the unconstrained coordinates are
``logit(pi0)``, ``logit(xi)`` and ``log(theta - 2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln, polygamma, psi

from covmod import kernels
from covmod.errors import TransformError


@dataclass(frozen=True)
class BinParams:
    pi0: float
    xi: float
    theta: float

    def as_tuple(self):
        return (self.pi0, self.xi, self.theta)


@dataclass(frozen=True)
class TransformedParams:
    pi0_t: float
    xi_t: float
    theta_t: float

    def as_array(self) -> np.ndarray:
        return np.array([self.pi0_t, self.xi_t, self.theta_t], dtype=float)

    @classmethod
    def from_array(cls, v) -> "TransformedParams":
        return cls(float(v[0]), float(v[1]), float(v[2]))


DEFAULT_START = TransformedParams(1.0, 0.0, 0.0)


def _logit(u, name):
    if not 0.0 < u < 1.0:
        raise TransformError(f"{name}={u!r} has no finite logit (needs 0 < {name} < 1)")
    return math.log(u) - math.log1p(-u)


def to_transformed(params: BinParams) -> TransformedParams:
    if not params.theta > 2.0:
        raise TransformError(f"theta={params.theta!r} has no finite image (needs theta > 2)")
    return TransformedParams(
        _logit(params.pi0, "pi0"),
        _logit(params.xi, "xi"),
        math.log(params.theta - 2.0),
    )


def to_natural(t) -> BinParams:
    if not isinstance(t, TransformedParams):
        t = TransformedParams.from_array(t)
    return BinParams(float(expit(t.pi0_t)), float(expit(t.xi_t)), 2.0 + math.exp(t.theta_t))


def _as_array(t):
    return t.as_array() if isinstance(t, TransformedParams) else np.asarray(t, dtype=float)


def log_beta_norm(xi, theta):
    """log of Gamma(xi + theta) / (Gamma(xi) Gamma(theta))."""
    return gammaln(xi + theta) - gammaln(xi) - gammaln(theta)


def mix_density(p, params: BinParams):
    """Mixture density ``pi0 + (1 - pi0) Beta(p; xi, theta)``.

    Works on scalars or arrays. The beta normaliser is built from log-gamma
    so large shape parameters do not overflow.
    """
    pi0, xi, theta = params.pi0, params.xi, params.theta
    p_arr = np.asarray(p, dtype=float)
    lb = log_beta_norm(xi, theta) + (xi - 1.0) * np.log(p_arr) + (theta - 1.0) * np.log1p(-p_arr)
    out = pi0 + (1.0 - pi0) * np.exp(lb)
    return float(out) if out.ndim == 0 else out


class BinData:
    """p-values of one bin with their logs cached for repeated evaluation."""

    __slots__ = ("p", "logp", "log1mp")

    def __init__(self, p):
        self.p = np.ascontiguousarray(p, dtype=float)
        if self.p.size == 0:
            raise ValueError("a bin needs at least one p-value")
        self.logp = np.log(self.p)
        self.log1mp = np.log1p(-self.p)

    def __len__(self):
        return self.p.size


def _as_bindata(pvec):
    return pvec if isinstance(pvec, BinData) else BinData(pvec)


def _natural_parts(v):
    a, s, t = float(v[0]), float(v[1]), float(v[2])
    pi0, q0 = float(expit(a)), float(expit(-a))
    xi, xi_c = float(expit(s)), float(expit(-s))
    et = math.exp(t)
    return pi0, q0, xi, xi_c, et


def bin_log_likelihood(pvec, t) -> float:
    """Sum of log mixture densities over the p-values of one bin."""
    data = _as_bindata(pvec)
    pi0, q0, xi, _, et = _natural_parts(_as_array(t))
    theta = 2.0 + et
    return kernels.loglik(data.logp, data.log1mp, pi0, q0, xi, theta, log_beta_norm(xi, theta))


def bin_grad_hess(pvec, t, *, with_value=False):
    """Analytic gradient and Hessian of :func:`bin_log_likelihood`.

    Derivatives are taken with respect to the transformed coordinates
    ``(logit pi0, logit xi, log(theta - 2))``. With ``with_value=True`` the
    log-likelihood is returned as a third element.
    """
    data = _as_bindata(pvec)
    pi0, q0, xi, xi_c, et = _natural_parts(_as_array(t))
    theta = 2.0 + et
    s = xi + theta
    psi_s = psi(s)
    tri_s = float(polygamma(1, s))
    sums = kernels.loglik_derivs(
        data.logp, data.log1mp, pi0, q0, xi, theta, log_beta_norm(xi, theta),
        psi_s - psi(xi), psi_s - psi(theta),
        tri_s - float(polygamma(1, xi)), tri_s - float(polygamma(1, theta)), tri_s,
    )
    gn = sums[1:4]
    h00, h01, h02, h11, h12, h22 = sums[4:]
    hn = np.array([[h00, h01, h02], [h01, h11, h12], [h02, h12, h22]])

    jac = np.array([pi0 * q0, xi * xi_c, et])
    curv = np.array([pi0 * q0 * (q0 - pi0), xi * xi_c * (xi_c - xi), et])
    grad = jac * gn
    hess = hn * np.outer(jac, jac) + np.diag(curv * gn)
    if with_value:
        return grad, hess, float(sums[0])
    return grad, hess
