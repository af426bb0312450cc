"""Independent reference computations used by the tests.

These use mpmath at high precision and share no code with the package.
"""
import mpmath as mp

mp.mp.dps = 40


def normal_sf(z):
    return float(mp.ncdf(-mp.mpf(z)))


def mixture_density(p, pi0, xi, theta):
    p, pi0, xi, theta = (mp.mpf(v) for v in (p, pi0, xi, theta))
    beta = mp.gamma(xi + theta) / (mp.gamma(xi) * mp.gamma(theta)) * p ** (xi - 1) * (1 - p) ** (theta - 1)
    return pi0 + (1 - pi0) * beta


def logistic(u):
    return float(1 / (1 + mp.e ** (-mp.mpf(u))))


def null_posterior(p, t):
    """pi0 / f(p) from transformed parameters, at high precision."""
    a, s, r = (mp.mpf(v) for v in t)
    pi0 = 1 / (1 + mp.e ** (-a))
    xi = 1 / (1 + mp.e ** (-s))
    theta = 2 + mp.e ** r
    return pi0 / mixture_density(p, pi0, xi, theta)


def true_posterior(p, pi0, mu):
    z = -mp.sqrt(2) * mp.erfinv(2 * mp.mpf(p) - 1)  # Phi^{-1}(1 - p)
    pi0, mu = mp.mpf(pi0), mp.mpf(mu)
    num = pi0 * mp.npdf(z)
    return float(num / (num + (1 - pi0) * mp.npdf(z - mu)))


def curve_integral(pi0_at_0, pi0_at_1, gamma):
    a, b = -mp.log(mp.mpf(pi0_at_0)), -mp.log(mp.mpf(pi0_at_1))
    g = mp.mpf(gamma)
    return float(mp.quad(lambda x: mp.e ** (-a - (b - a) * x ** g), [0, 1]))


# frozen values computed with the functions above (40 digits)
P_AT_Z_1_6448536269514722 = 0.050000000000000053101
LOGISTIC_2 = 0.88079707797788244406
LOGLIK_HALF_NEAR_UNIFORM = -1.3779712595351617559e-9  # p = 0.5, t = (20, 0, 0)
DENSITY_03_04_5_AT_001 = 9.2280875207246856963
