# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-bin sums for the uniform-beta mixture log-likelihood."""
from libc.math cimport exp, log

import numpy as np


def loglik(const double[::1] logp, const double[::1] log1mp, double pi0, double q0,
           double xi, double theta, double lognorm):
    cdef Py_ssize_t i, n = logp.shape[0]
    cdef double s = 0.0, g
    cdef double a = xi - 1.0, b = theta - 1.0
    for i in range(n):
        g = exp(lognorm + a * logp[i] + b * log1mp[i])
        s += log(pi0 + q0 * g)
    return s


def loglik_derivs(const double[::1] logp, const double[::1] log1mp, double pi0, double q0,
                  double xi, double theta, double lognorm, double dxi, double dth,
                  double tri_xi, double tri_th, double tri_c):
    cdef Py_ssize_t i, n = logp.shape[0]
    cdef double a = xi - 1.0, b = theta - 1.0
    cdef double g, f, inv_f, w, lx, lt, d0
    cdef double s = 0.0, g0 = 0.0, g1 = 0.0, g2 = 0.0
    cdef double h00 = 0.0, h01 = 0.0, h02 = 0.0, h11 = 0.0, h12 = 0.0, h22 = 0.0
    for i in range(n):
        g = exp(lognorm + a * logp[i] + b * log1mp[i])
        f = pi0 + q0 * g
        inv_f = 1.0 / f
        w = q0 * g * inv_f
        lx = dxi + logp[i]
        lt = dth + log1mp[i]
        d0 = (1.0 - g) * inv_f
        s += log(f)
        g0 += d0
        g1 += w * lx
        g2 += w * lt
        h00 -= d0 * d0
        h01 -= g * lx * inv_f + d0 * w * lx
        h02 -= g * lt * inv_f + d0 * w * lt
        h11 += w * (lx * lx + tri_xi) - w * w * lx * lx
        h12 += w * (lx * lt + tri_c) - w * w * lx * lt
        h22 += w * (lt * lt + tri_th) - w * w * lt * lt
    return np.array([s, g0, g1, g2, h00, h01, h02, h11, h12, h22])
