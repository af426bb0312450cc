"""Test-record data model, z-to-p conversion and delimited-text I/O."""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np
from scipy import stats

from covmod.errors import ConfigError, InputError, ParseError

P_EPS = 1e-12


@dataclass(frozen=True)
class TestRecord:
    __test__ = False  # not a pytest class

    id: str
    p: float
    x: float
    z: float | None = None


def _readonly(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable, ordered collection of tests stored column-wise.

    ``p`` is already clipped to ``[P_EPS, 1 - P_EPS]``. ``z`` is ``None`` when
    no test statistic column was supplied.
    """

    ids: tuple
    p: np.ndarray
    x: np.ndarray
    z: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        object.__setattr__(self, "p", _readonly(self.p))
        object.__setattr__(self, "x", _readonly(self.x))
        if self.z is not None:
            object.__setattr__(self, "z", _readonly(self.z))
        m = len(self.ids)
        if m < 1:
            raise InputError("dataset must contain at least one record")
        if self.p.shape != (m,) or self.x.shape != (m,):
            raise InputError("id, p and x columns differ in length")
        if self.z is not None and self.z.shape != (m,):
            raise InputError("z column length differs from id column")
        if len(set(self.ids)) != m:
            raise InputError("record ids are not unique")
        if np.any(self.p < P_EPS) or np.any(self.p > 1 - P_EPS):
            raise InputError("p-values must be clipped to [1e-12, 1 - 1e-12]")
        if not np.all(np.isfinite(self.x)):
            raise InputError("covariates must be finite")

    @classmethod
    def from_arrays(cls, ids, p, x, z=None) -> "Dataset":
        """Build a dataset from raw columns, clipping p once."""
        p = np.asarray(p, dtype=float)
        if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
            raise InputError("p-values must lie in [0, 1]")
        return cls(ids, clip_p(p), x, z)

    @property
    def m(self) -> int:
        return len(self.ids)

    def __len__(self):
        return self.m

    @property
    def records(self) -> Iterator[TestRecord]:
        for i, rid in enumerate(self.ids):
            z = None if self.z is None else float(self.z[i])
            yield TestRecord(rid, float(self.p[i]), float(self.x[i]), z)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        same_z = (self.z is None and other.z is None) or (
            self.z is not None and other.z is not None and np.array_equal(self.z, other.z)
        )
        return (
            self.ids == other.ids
            and np.array_equal(self.p, other.p)
            and np.array_equal(self.x, other.x)
            and same_z
        )

    def subset(self, mask) -> "Dataset":
        idx = np.flatnonzero(mask)
        z = None if self.z is None else self.z[idx]
        return Dataset(tuple(self.ids[i] for i in idx), self.p[idx], self.x[idx], z)


def clip_p(p):
    return np.clip(p, P_EPS, 1.0 - P_EPS)


def _null_distribution(null_dist: str):
    if null_dist in ("normal", "norm", "standard_normal"):
        return stats.norm
    if null_dist.startswith("t:"):
        try:
            df = float(null_dist[2:])
        except ValueError:
            raise ConfigError(f"bad degrees of freedom in null distribution {null_dist!r}")
        if not df > 0:
            raise ConfigError("t null distribution needs positive degrees of freedom")
        return stats.t(df)
    raise ConfigError(f"unsupported null distribution {null_dist!r} (use 'normal' or 't:<df>')")


def z_to_p(z, null_dist: str = "normal"):
    """One-sided upper-tail p-value ``1 - F0(z)``.

    Accepts scalars or arrays; the survival function is used so that large
    ``z`` keeps full relative precision.
    """
    dist = _null_distribution(null_dist)
    z_arr = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z_arr)):
        raise InputError("z must be finite")
    out = dist.sf(z_arr)
    return float(out) if np.ndim(out) == 0 else out


DEFAULT_SCHEMA = {"id": "id", "x": "x", "p": "p", "z": "z"}


def _detect_delimiter(header_line: str) -> str:
    return "\t" if "\t" in header_line else ","


def parse_dataset(source, schema: Mapping[str, str] | None = None, null_dist: str = "normal") -> Dataset:
    """Parse delimiter-separated text with a header row into a Dataset.

    ``source`` may be bytes, str, or a binary/text file object. ``schema`` maps
    the roles ``id``, ``x``, ``p`` and ``z`` to column names; when both p and z
    columns are present, p is taken from the p column and z is kept and
    checked for consistency.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    if text.startswith("﻿"):
        text = text[1:]
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise ParseError("input is empty (header row required)")
    delim = _detect_delimiter(lines[0])
    reader = csv.reader(io.StringIO(text), delimiter=delim)
    header = [h.strip() for h in next(reader)]
    col = {name: k for k, name in enumerate(header)}

    for role in ("id", "x"):
        if schema[role] not in col:
            raise ParseError(f"missing required column {schema[role]!r}")
    has_p = schema["p"] in col
    has_z = schema["z"] in col
    if not (has_p or has_z):
        raise ParseError(f"need a {schema['p']!r} or {schema['z']!r} column")

    ids, xs, ps, zs = [], [], [], []
    seen = set()
    for rowno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"row {rowno}: expected {len(header)} fields, got {len(row)}")
        rid = row[col[schema["id"]]].strip()
        if rid in seen:
            raise ParseError(f"row {rowno}: duplicate id {rid!r}")
        seen.add(rid)

        def num(role):
            s = row[col[schema[role]]].strip()
            try:
                v = float(s)
            except ValueError:
                raise ParseError(f"row {rowno}: non-numeric {role} value {s!r}") from None
            if not math.isfinite(v):
                raise ParseError(f"row {rowno}: non-finite {role} value {s!r}")
            return v

        x = num("x")
        z = num("z") if has_z else None
        if has_p:
            p = num("p")
            if not 0.0 <= p <= 1.0:
                raise ParseError(f"row {rowno}: p-value {p!r} outside [0, 1]")
            if z is not None:
                p_from_z = z_to_p(z, null_dist)
                if abs(p - p_from_z) > P_EPS and abs(float(clip_p(p_from_z)) - p) > P_EPS:
                    raise ParseError(f"row {rowno}: p and z columns disagree")
        else:
            p = z_to_p(z, null_dist)
        ids.append(rid)
        xs.append(x)
        ps.append(p)
        zs.append(z)

    if not ids:
        raise ParseError("input has a header but no data rows")
    z_arr = np.array(zs, dtype=float) if has_z else None
    return Dataset(tuple(ids), clip_p(np.array(ps, dtype=float)), np.array(xs, dtype=float), z_arr)


def read_dataset(path, schema=None, null_dist="normal") -> Dataset:
    try:
        with open(path, "rb") as fh:
            return parse_dataset(fh, schema, null_dist)
    except FileNotFoundError:
        raise ParseError(f"input file not found: {path}") from None


def format_float(v) -> str:
    return repr(float(v))


def serialize_dataset(ds: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["id", "x", "p"] + (["z"] if ds.z is not None else [])
    w.writerow(header)
    for i, rid in enumerate(ds.ids):
        row = [rid, format_float(ds.x[i]), format_float(ds.p[i])]
        if ds.z is not None:
            row.append(format_float(ds.z[i]))
        w.writerow(row)
    return buf.getvalue()


def atomic_write_text(path, text: str):
    """Write via a temporary sibling file and rename, so no partial output survives."""
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_dataset(ds: Dataset, path):
    atomic_write_text(path, serialize_dataset(ds))
