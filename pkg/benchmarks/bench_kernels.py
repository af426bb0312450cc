"""Compare the compiled and numpy likelihood kernels.

Run with ``python3 benchmarks/bench_kernels.py``. Times the per-bin
log-likelihood and derivative sums at two bin sizes, then a complete
10-bin fit under each backend (the backend is chosen at import, so the
full fit runs in a subprocess per backend).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np
from scipy.special import polygamma, psi

from covmod import kernels
from covmod.mixture import BinData, log_beta_norm

FULL_FIT = """
import time
from covmod import BACKEND
from covmod.binning import quantile_bins
from covmod.fit import fit_joint
from covmod.simulation import SimConfig, simulate
ds, _ = simulate(SimConfig(m=30000, pibar0=0.5, pi0_at_0=0.9, pi0_at_1=0.1, seed=1))
layout = quantile_bins(ds, 10)
best = float("inf")
for _ in range({repeat}):
    t0 = time.perf_counter()
    fit_joint(ds, layout)
    best = min(best, time.perf_counter() - t0)
print(BACKEND, best)
"""


def kernel_args(m, seed=0):
    rng = np.random.default_rng(seed)
    d = BinData(np.where(rng.random(m) < 0.6, rng.random(m), rng.beta(0.3, 5, m)).clip(1e-12, 1 - 1e-12))
    pi0, xi, th = 0.6, 0.4, 6.0
    s = xi + th
    base = (d.logp, d.log1mp, pi0, 1 - pi0, xi, th, float(log_beta_norm(xi, th)))
    extra = (psi(s) - psi(xi), psi(s) - psi(th), float(polygamma(1, s) - polygamma(1, xi)),
             float(polygamma(1, s) - polygamma(1, th)), float(polygamma(1, s)))
    return base, extra


def bench_kernels(sizes, number):
    backends = {"python": kernels.get_backend("python")}
    try:
        backends["cython"] = kernels.get_backend("cython")
    except ImportError:
        print("compiled extension not available; timing the numpy kernels only")
    print(f"{'m':>7} {'kernel':>14} " + " ".join(f"{b:>12}" for b in backends) + "   speed-up")
    for m in sizes:
        base, extra = kernel_args(m)
        for name, call in (("loglik", lambda k: k.loglik(*base)),
                           ("loglik_derivs", lambda k: k.loglik_derivs(*base, *extra))):
            times = {b: min(timeit.repeat(lambda: call(k), number=number, repeat=5)) / number
                     for b, k in backends.items()}
            cells = " ".join(f"{times[b] * 1e6:10.1f}us" for b in backends)
            ratio = times["python"] / times["cython"] if "cython" in times else float("nan")
            print(f"{m:>7} {name:>14} {cells}   {ratio:7.1f}x")


def bench_full_fit(repeat):
    results = {}
    for flag in ("0", "1"):
        env = {**os.environ, "COVMOD_PURE_PYTHON": flag}
        out = subprocess.run([sys.executable, "-c", FULL_FIT.format(repeat=repeat)], env=env,
                             capture_output=True, text=True, check=True).stdout.split()
        results[out[0]] = float(out[1])
    for b, t in results.items():
        print(f"full 10-bin fit, m = 30000, {b:>6}: {t * 1e3:8.1f} ms")
    if len(results) == 2:
        print(f"speed-up: {results['python'] / results['cython']:.1f}x")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[300, 3000, 30000])
    ap.add_argument("--number", type=int, default=50)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    bench_kernels(args.sizes, args.number)
    bench_full_fit(args.repeat)


if __name__ == "__main__":
    main()
