import csv
import json
import math

import numpy as np
import pytest

from covmod.cli import CURVE_GRID, main
from covmod.ingest import Dataset, read_dataset, write_dataset
from covmod.simulation import REFERENCE_CONFIGS, SimConfig, simulate


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))


@pytest.fixture(scope="module")
def strong_csv(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    ds, _ = simulate(SimConfig(m=4000, pibar0=0.5, pi0_at_0=0.9, pi0_at_1=0.1, seed=21))
    write_dataset(ds, d / "strong.csv")
    return d / "strong.csv"


@pytest.fixture(scope="module")
def fitted(strong_csv, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    assert main(["fit", "--input", str(strong_csv), "--bins", "8", "--output-dir", str(out)]) == 0
    assert main(["score", "--input", str(strong_csv), "--fit", str(out / "fit.json"),
                 "--output-dir", str(out)]) == 0
    return out


def test_fit_artifact_contents(fitted, strong_csv):
    doc = json.loads((fitted / "fit.json").read_text())
    assert doc["covariate_fit"]["B"] == 8
    assert doc["covariate_fit"]["converged"]
    assert len(doc["summary"]["bins"]) == 8
    assert doc["onebin_fit"]["B"] == 1
    assert 0 < doc["summary"]["storey_pi0"] <= 1
    assert doc["input"]["m"] == 4000


def test_fit_prints_table(strong_csv, tmp_path, capsys):
    main(["fit", "--input", str(strong_csv), "--bins", "4", "--output-dir", str(tmp_path)])
    out = capsys.readouterr().out
    assert "one-bin model: pi0 =" in out and "Storey pi0" in out
    assert out.count("[") >= 4 * 3


def test_twenty_bins_with_zero_bin_and_c5(tmp_path):
    ds, _ = simulate(SimConfig(m=6000, pibar0=0.5, pi0_at_0=0.9, pi0_at_1=0.1, seed=8))
    x = ds.x.copy()
    x[::10] = 0.0
    write_dataset(Dataset(ds.ids, ds.p, x), tmp_path / "d.csv")
    rc = main(["fit", "--input", str(tmp_path / "d.csv"), "--bins", "20", "--smoothing-scale", "5",
               "--zero-bin", "0", "--output-dir", str(tmp_path)])
    assert rc == 0
    doc = json.loads((tmp_path / "fit.json").read_text())
    assert doc["layout"]["counts"][0] == 600 and doc["covariate_fit"]["c"] == 5.0


def test_one_bin_only(strong_csv, tmp_path, capsys):
    assert main(["fit", "--input", str(strong_csv), "--bins", "1", "--output-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].startswith("one-bin model")
    doc = json.loads((tmp_path / "fit.json").read_text())
    assert doc["covariate_fit"] is None
    assert main(["score", "--input", str(strong_csv), "--fit", str(tmp_path / "fit.json"),
                 "--output-dir", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "scores.csv")
    assert all(r["rank_cov"] == r["rank_onebin"] for r in rows)


def test_score_reproduces_assignment(fitted, strong_csv):
    from covmod.binning import quantile_bins
    rows = _rows(fitted / "scores.csv")
    layout = quantile_bins(read_dataset(strong_csv), 8)
    assert [int(r["bin"]) for r in rows] == layout.assignment.tolist()
    assert list(rows[0]) == ["id", "p", "x", "bin", "prob", "ci_lo", "ci_hi", "rank_cov", "rank_onebin",
                             "significant"]
    assert sorted(int(r["rank_cov"]) for r in rows) == list(range(1, 4001))


def test_score_counts_favour_covariate(fitted, strong_csv, capsys):
    main(["score", "--input", str(strong_csv), "--fit", str(fitted / "fit.json"),
          "--output", str(fitted / "s2.csv")])
    line = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("both")][0]
    counts = dict(part.split(" = ") for part in line.split(", "))
    cov_only, base_only = int(counts["covariate-only"]), int(counts["baseline-only"])
    assert cov_only > 0 and base_only >= 0 and cov_only > base_only


def test_threshold_zero(fitted, strong_csv, tmp_path):
    main(["score", "--input", str(strong_csv), "--fit", str(fitted / "fit.json"), "--threshold", "0",
          "--output-dir", str(tmp_path)])
    assert all(r["significant"] == "0" for r in _rows(tmp_path / "scores.csv"))


def test_layout_mismatch_exit_3(fitted, tmp_path):
    ds, _ = simulate(SimConfig(m=3000, pibar0=0.5, pi0_at_0=0.9, pi0_at_1=0.1, seed=99))
    write_dataset(ds, tmp_path / "other.csv")
    args = ["score", "--input", str(tmp_path / "other.csv"), "--fit", str(fitted / "fit.json"),
            "--output-dir", str(tmp_path)]
    assert main(args) == 3
    assert not (tmp_path / "scores.csv").exists()
    assert main(args + ["--frozen-layout"]) == 0


def test_parse_error_exit_2(tmp_path, capsys):
    (tmp_path / "bad.csv").write_text("id,x,p\na,0,0.5\nb,1,7\n")
    assert main(["fit", "--input", str(tmp_path / "bad.csv"), "--output-dir", str(tmp_path)]) == 2
    assert "row 3" in capsys.readouterr().err
    assert not (tmp_path / "fit.json").exists()


def test_config_error_exit_3(strong_csv, tmp_path):
    assert main(["fit", "--input", str(strong_csv), "--bins", "500", "--output-dir", str(tmp_path)]) == 3
    assert main(["simulate", "--pibar0", "0.95", "--output-dir", str(tmp_path)]) == 3
    assert main(["plotdata", "--fit", str(tmp_path / "none.json"), "--output-dir", str(tmp_path)]) == 3


@pytest.mark.parametrize("name", sorted(REFERENCE_CONFIGS))
def test_simulate_paper_configurations(name, tmp_path):
    pibar0, a0, a1 = REFERENCE_CONFIGS[name]
    rc = main(["simulate", "--pibar0", str(pibar0), "--pi0-at-0", str(a0), "--pi0-at-1", str(a1),
               "--m", "3000", "--replicates", "3", "--seed", "1", "--output-dir", str(tmp_path)])
    assert rc == 0
    rows = _rows(tmp_path / "summary.csv")
    assert list(rows[0]) == ["method", "bin", "p", "truth", "q05", "median", "q95"]
    assert len(rows) == 2 * 10 * 101
    head = (tmp_path / "summary.csv").read_text().splitlines()[0]
    assert head.startswith("# ")
    assert len(_rows(tmp_path / "truth.csv")) == 3000
    assert read_dataset(tmp_path / "dataset.csv").m == 3000


def test_simulate_single_replicate_raw(tmp_path):
    assert main(["simulate", "--m", "2000", "--replicates", "1", "--output-dir", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "summary.csv")
    assert list(rows[0]) == ["method", "bin", "p", "truth", "estimate"]


def test_plotdata(fitted, tmp_path):
    rc = main(["plotdata", "--fit", str(fitted / "fit.json"), "--scores", str(fitted / "scores.csv"),
               "--output-dir", str(tmp_path)])
    assert rc == 0
    curves = _rows(tmp_path / "posterior_curves.csv")
    assert len(curves) == 8 * CURVE_GRID.size
    last = [r for r in curves if float(r["p"]) == 1 - 1e-12]
    assert len(last) == 8 and all(abs(float(r["prob"]) - 1) <= 1e-9 for r in last)
    cutoffs = _rows(tmp_path / "threshold_curve.csv")
    assert len(cutoffs) == 8
    steps = _rows(tmp_path / "pi0_steps.csv")
    assert len(steps) == 8 and {"ci_lo", "ci_hi"} <= set(steps[0])
    assert all(float(r["ci_lo"]) <= float(r["pi0"]) <= float(r["ci_hi"]) for r in steps)
    ranks = _rows(tmp_path / "rank_changes.csv")
    assert len(ranks) == 4000
    assert all(int(r["displacement"]) == int(r["rank_onebin"]) - int(r["rank_cov"]) for r in ranks)


def test_plotdata_needs_scores(fitted, tmp_path):
    assert main(["plotdata", "--fit", str(fitted / "fit.json"), "--output-dir", str(tmp_path)]) == 3


def test_validate_quick(tmp_path):
    rc = main(["validate", "--cases", "20", "--mcmc-iters", "3000", "--mcmc-burn-in", "1000",
               "--output-dir", str(tmp_path)])
    rep = json.loads((tmp_path / "validation_report.json").read_text())
    names = [c["name"] for c in rep["checks"]]
    assert names == ["joint-gradient", "delta-method-gradient", "density-normalisation", "gaussian-vs-mcmc"]
    assert all(c["pass"] for c in rep["checks"][:3])
    assert rc == (0 if all(c["pass"] for c in rep["checks"]) else 4)
