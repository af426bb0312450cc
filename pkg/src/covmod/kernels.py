"""Backend selection for the per-bin likelihood sums.

The compiled extension is used when it imports; setting ``COVMOD_PURE_PYTHON=1``
forces the numpy fallback.
"""
import os

from covmod import _core_py

if os.environ.get("COVMOD_PURE_PYTHON", "") not in ("", "0"):
    _impl = _core_py
    BACKEND = "python"
else:
    try:
        from covmod import _core as _impl
    except ImportError:
        _impl = _core_py
        BACKEND = "python"
    else:
        BACKEND = "cython"

loglik = _impl.loglik
loglik_derivs = _impl.loglik_derivs


def get_backend(name):
    """Return the kernel module for ``'cython'`` or ``'python'``."""
    if name == "python":
        return _core_py
    if name == "cython":
        from covmod import _core
        return _core
    raise ValueError(f"unknown backend {name!r}")
