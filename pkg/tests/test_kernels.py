import numpy as np
import pytest
from hypothesis import given, strategies as st

from covmod import kernels
from covmod.mixture import BinData, _natural_parts, log_beta_norm
from scipy.special import polygamma, psi

py = kernels.get_backend("python")
try:
    cy = kernels.get_backend("cython")
except ImportError:  # extension not built
    cy = None

needs_ext = pytest.mark.skipif(cy is None, reason="compiled extension not built")


def _args(t, p):
    d = BinData(p)
    pi0, q0, xi, _, et = _natural_parts(t)
    th = 2.0 + et
    s = xi + th
    extra = (psi(s) - psi(xi), psi(s) - psi(th),
             float(polygamma(1, s) - polygamma(1, xi)), float(polygamma(1, s) - polygamma(1, th)),
             float(polygamma(1, s)))
    return (d.logp, d.log1mp, pi0, q0, xi, th, float(log_beta_norm(xi, th))), extra


def test_backend_name():
    assert kernels.BACKEND in ("cython", "python")
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


@needs_ext
@given(st.tuples(st.floats(-8, 8), st.floats(-5, 5), st.floats(-4, 6)),
       st.lists(st.floats(1e-12, 1 - 1e-12), min_size=1, max_size=300))
def test_backends_agree(t, p):
    base, extra = _args(np.array(t), np.array(p))
    a, b = cy.loglik(*base), py.loglik(*base)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-10)
    da, db = cy.loglik_derivs(*base, *extra), py.loglik_derivs(*base, *extra)
    scale = np.maximum(np.abs(db), 1.0)
    assert np.all(np.abs(da - db) <= 1e-11 * scale * len(p))


def test_python_backend_consistent_with_direct_sum():
    rng = np.random.default_rng(0)
    p = rng.random(500)
    base, _ = _args(np.array([0.3, -0.2, 1.1]), p)
    logp, log1mp, pi0, q0, xi, th, ln = base
    direct = np.sum(np.log(pi0 + q0 * np.exp(ln + (xi - 1) * logp + (th - 1) * log1mp)))
    assert py.loglik(*base) == pytest.approx(direct, rel=1e-13)
