"""Covariate binning: an optional exact-value bin plus equal-count quantile bins.

Bin indices are 1-based throughout the public API.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from covmod.errors import ConfigError, InputError

DEFAULT_MIN_BIN_SIZE = 50


@dataclass(frozen=True, eq=False)
class BinLayout:
    """Frozen bin boundaries and the assignment of one dataset to them.

    ``edges`` holds the cut points between the quantile bins only, so it has
    ``B - 1`` entries without a zero bin and ``B - 2`` with one.
    """

    B: int
    edges: tuple
    zero_sentinel: float | None
    assignment: np.ndarray
    counts: tuple
    representative_x: tuple

    @property
    def n_quantile(self) -> int:
        return self.B - (1 if self.zero_sentinel is not None else 0)

    @property
    def offset(self) -> int:
        return 0 if self.zero_sentinel is None else 1

    def members(self, j: int) -> np.ndarray:
        """Record indices (0-based, input order) belonging to bin ``j``."""
        return np.flatnonzero(self.assignment == j)

    def midpoints(self) -> list:
        return [0.5 * (lo + hi) for lo, hi in self.representative_x]

    def to_dict(self) -> dict:
        return {
            "B": self.B,
            "edges": [float(e) for e in self.edges],
            "zero_sentinel": self.zero_sentinel,
            "counts": list(self.counts),
            "representative_x": [[float(a), float(b)] for a, b in self.representative_x],
        }

    def frozen_hash(self) -> str:
        """Hash of everything that determines where a covariate lands."""
        key = {"B": self.B, "edges": [repr(float(e)) for e in self.edges],
               "zero_sentinel": None if self.zero_sentinel is None else repr(float(self.zero_sentinel))}
        return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:16]

    def layout_hash(self) -> str:
        """Hash of the frozen boundaries together with the per-bin counts."""
        key = {"frozen": self.frozen_hash(), "counts": list(self.counts)}
        return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict, x=None) -> "BinLayout":
        """Rebuild a layout; assignment is recomputed when covariates are given."""
        B = int(d["B"])
        shell = cls(B, tuple(float(e) for e in d["edges"]), d.get("zero_sentinel"),
                    np.zeros(0, dtype=np.int64), tuple(d["counts"]),
                    tuple(tuple(r) for r in d["representative_x"]))
        if x is None:
            return shell
        assignment = np.array([assign_bin(v, shell) for v in np.asarray(x, float)], dtype=np.int64)
        return cls(shell.B, shell.edges, shell.zero_sentinel, assignment, shell.counts,
                   shell.representative_x)


def quantile_bins(dataset, B: int, zero_sentinel: float | None = None,
                  min_bin_size: int = DEFAULT_MIN_BIN_SIZE) -> BinLayout:
    """Split a dataset into ``B`` covariate bins.

    Records whose covariate equals ``zero_sentinel`` form bin 1. The rest are
    sorted by (covariate, input position) and cut into equal-count groups, the
    first groups taking one extra record when the division is uneven. Records
    tied with the last value of a group are pulled into that group, so ties
    never straddle an edge.
    """
    x = np.asarray(dataset.x if hasattr(dataset, "x") else dataset, dtype=float)
    m = x.size
    if int(B) != B or B < 1:
        raise ConfigError(f"number of bins must be a positive integer, got {B!r}")
    B = int(B)
    if zero_sentinel is not None:
        zero_sentinel = float(zero_sentinel)
        if B < 2:
            raise ConfigError("a zero bin needs B >= 2")
        is_zero = x == zero_sentinel
        if not is_zero.any():
            raise ConfigError(f"zero-bin sentinel {zero_sentinel!r} does not occur in the data")
    else:
        is_zero = np.zeros(m, dtype=bool)

    K = B - (1 if zero_sentinel is not None else 0)
    rest = np.flatnonzero(~is_zero)
    n = rest.size
    if n // K < max(min_bin_size, 1):
        raise ConfigError(
            f"{B} bins infeasible: {n} non-sentinel records give fewer than "
            f"{max(min_bin_size, 1)} per bin"
        )
    order = rest[np.argsort(x[rest], kind="stable")]
    xs = x[order]

    base, extra = divmod(n, K)
    sizes = [base + (1 if k < extra else 0) for k in range(K)]
    starts = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    for k in range(1, K):
        s = max(starts[k], starts[k - 1])
        while 0 < s < n and xs[s] == xs[s - 1]:
            s += 1
        starts[k] = s
    group_sizes = np.diff(starts)
    if np.any(group_sizes < max(min_bin_size, 1)):
        raise ConfigError(
            f"{B} bins infeasible: tied covariates leave a bin with fewer than "
            f"{max(min_bin_size, 1)} records"
        )

    offset = 1 if zero_sentinel is not None else 0
    assignment = np.empty(m, dtype=np.int64)
    assignment[is_zero] = 1
    edges = []
    rep = []
    if zero_sentinel is not None:
        rep.append((zero_sentinel, zero_sentinel))
    for k in range(K):
        lo, hi = starts[k], starts[k + 1]
        assignment[order[lo:hi]] = k + 1 + offset
        rep.append((float(xs[lo]), float(xs[hi - 1])))
        if k > 0:
            a, b = xs[lo - 1], xs[lo]
            e = 0.5 * a + 0.5 * b
            # adjacent doubles can round the midpoint up onto b
            edges.append(e if a <= e < b else a)
    counts = tuple(int(c) for c in np.bincount(assignment, minlength=B + 1)[1:])
    return BinLayout(B, tuple(float(e) for e in edges), zero_sentinel, assignment, counts, tuple(rep))


def assign_bin(x: float, layout: BinLayout) -> int:
    """Bin index for covariate ``x`` against a frozen layout.

    Quantile bins are the half-open intervals ``(e[k-1], e[k]]``; values
    outside the edge range extrapolate to the first or last quantile bin.
    """
    x = float(x)
    if not math.isfinite(x):
        raise InputError("covariate must be finite")
    if layout.zero_sentinel is not None and x == layout.zero_sentinel:
        return 1
    k = int(np.searchsorted(np.asarray(layout.edges, dtype=float), x, side="left"))
    return k + 1 + layout.offset
