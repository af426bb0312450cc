"""Pure-numpy fallback for the compiled per-bin sums in ``_core.pyx``."""
import numpy as np


def loglik(logp, log1mp, pi0, q0, xi, theta, lognorm):
    g = np.exp(lognorm + (xi - 1.0) * logp + (theta - 1.0) * log1mp)
    return float(np.sum(np.log(pi0 + q0 * g)))


def loglik_derivs(logp, log1mp, pi0, q0, xi, theta, lognorm, dxi, dth, tri_xi, tri_th, tri_c):
    g = np.exp(lognorm + (xi - 1.0) * logp + (theta - 1.0) * log1mp)
    f = pi0 + q0 * g
    inv_f = 1.0 / f
    w = q0 * g * inv_f
    lx = dxi + logp
    lt = dth + log1mp
    d0 = (1.0 - g) * inv_f
    wlx = w * lx
    wlt = w * lt
    return np.array([
        np.sum(np.log(f)),
        np.sum(d0),
        np.sum(wlx),
        np.sum(wlt),
        -np.sum(d0 * d0),
        -np.sum(g * lx * inv_f + d0 * wlx),
        -np.sum(g * lt * inv_f + d0 * wlt),
        np.sum(w * (lx * lx + tri_xi) - wlx * wlx),
        np.sum(w * (lx * lt + tri_c) - wlx * wlt),
        np.sum(w * (lt * lt + tri_th) - wlt * wlt),
    ])
