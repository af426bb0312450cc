"""Text artifacts: fit documents (JSON), scores and figure-data tables (CSV)."""
from __future__ import annotations

import csv
import hashlib
import io
import json

import numpy as np

from covmod.binning import BinLayout
from covmod.errors import ConfigError, ParseError
from covmod.fit import ModelFit
from covmod.ingest import atomic_write_text, serialize_dataset

FIT_FORMAT = "covmod-fit/1"
SCORE_COLUMNS = ("id", "p", "x", "bin", "prob", "ci_lo", "ci_hi", "rank_cov", "rank_onebin", "significant")


def fmt(v) -> str:
    """Numbers as text with 17 significant digits (integers and flags pass through)."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    if v == float("inf"):
        return "inf"
    return format(v, ".17g")


def dataset_digest(ds) -> str:
    return hashlib.sha256(serialize_dataset(ds).encode()).hexdigest()


def write_table(path, header, rows, preamble=()):
    buf = io.StringIO()
    for line in preamble:
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def read_table(path):
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
    except FileNotFoundError:
        raise ConfigError(f"missing upstream file: {path}") from None
    reader = csv.DictReader(lines)
    return list(reader)


def write_json(path, doc):
    atomic_write_text(path, json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n")


def fit_document(settings: dict, dataset, layout: BinLayout, covariate_fit: ModelFit | None,
                 onebin_fit: ModelFit, summary: dict) -> dict:
    return {
        "format": FIT_FORMAT,
        "settings": settings,
        "input": {"m": dataset.m, "sha256": dataset_digest(dataset)},
        "layout": layout.to_dict(),
        "layout_hash": layout.layout_hash(),
        "frozen_layout_hash": layout.frozen_hash(),
        "covariate_fit": None if covariate_fit is None else covariate_fit.to_dict(),
        "onebin_fit": onebin_fit.to_dict(),
        "summary": summary,
    }


def load_fit_document(path):
    """Return ``(doc, layout, covariate_fit_or_None, onebin_fit)``."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"missing fit artifact: {path}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"fit artifact {path} is not valid JSON: {exc}") from None
    if doc.get("format") != FIT_FORMAT:
        raise ParseError(f"{path} is not a {FIT_FORMAT} document")
    layout = BinLayout.from_dict(doc["layout"])
    cov = doc.get("covariate_fit")
    one_layout = BinLayout(1, (), None, np.zeros(0, dtype=np.int64), (doc["input"]["m"],),
                           ((min(r[0] for r in doc["layout"]["representative_x"]),
                             max(r[1] for r in doc["layout"]["representative_x"])),))
    covariate_fit = None if cov is None else ModelFit.from_dict(cov, layout)
    onebin_fit = ModelFit.from_dict(doc["onebin_fit"], one_layout)
    return doc, layout, covariate_fit, onebin_fit
