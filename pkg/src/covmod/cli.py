"""Command-line interface: ``covmod fit | score | simulate | validate | plotdata``.

Exit codes: 0 success, 2 input/parse error, 3 configuration error,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from covmod import __version__
from covmod.artifacts import (
    SCORE_COLUMNS,
    fit_document,
    load_fit_document,
    read_table,
    write_json,
    write_table,
)
from covmod.binning import DEFAULT_MIN_BIN_SIZE, BinLayout, quantile_bins
from covmod.errors import ConfigError, CovmodError
from covmod.fit import fit_joint
from covmod.ingest import read_dataset, write_dataset
from covmod.report import (
    call_significant,
    fit_one_bin,
    natural_intervals,
    pi0_interval,
    posterior_curve,
    rank_by_prob,
    score_arrays,
    storey_pi0,
    threshold_curve,
)


def _out(args, name):
    os.makedirs(args.output_dir, exist_ok=True)
    return os.path.join(args.output_dir, name)


def _print(msg=""):
    print(msg, flush=True)


# ---------------------------------------------------------------------------
# fit


def cmd_fit(args) -> int:
    ds = read_dataset(args.input, null_dist=args.null_dist)
    if args.bins == 1:
        if args.zero_bin is not None:
            raise ConfigError("--zero-bin needs --bins >= 2")
        layout = quantile_bins(ds, 1, min_bin_size=1)
    else:
        layout = quantile_bins(ds, args.bins, args.zero_bin, args.min_bin_size)
    one = fit_one_bin(ds)
    cov = None if args.bins == 1 else fit_joint(ds, layout, args.smoothing_scale)

    est, lo, hi = pi0_interval(one)
    summary = {
        "onebin_pi0": [est, lo, hi],
        "storey_pi0": storey_pi0(ds.p, args.storey_lambda),
        "bins": [],
    }
    main = cov if cov is not None else one
    for j in range(1, main.B + 1):
        iv = natural_intervals(main, j)
        summary["bins"].append({
            "bin": j,
            "count": int(layout.counts[j - 1]),
            "x_range": list(layout.representative_x[j - 1]),
            **{k: list(v) for k, v in iv.items()},
        })
    settings = {
        "bins": args.bins,
        "smoothing_scale": args.smoothing_scale,
        "zero_bin": args.zero_bin,
        "min_bin_size": args.min_bin_size,
        "storey_lambda": args.storey_lambda,
        "null_dist": args.null_dist,
        "ridge_note": "objective includes a ridge -(ridge/2)*||v - init||^2 anchored at the stage-1 values",
    }
    path = args.fit or _out(args, "fit.json")
    write_json(path, fit_document(settings, ds, layout, cov, one, summary))

    if cov is not None:
        _print(f"{'bin':>4} {'n':>7} {'x_lo':>10} {'x_hi':>10}  "
               f"{'pi0 [95%]':>27}  {'xi [95%]':>27}  {'theta [95%]':>30}")
        for b in summary["bins"]:
            cells = "  ".join(f"{v[0]:8.4f} [{v[1]:7.4f},{v[2]:7.4f}]" for v in (b["pi0"], b["xi"]))
            th = b["theta"]
            _print(f"{b['bin']:>4} {b['count']:>7} {b['x_range'][0]:>10.4g} {b['x_range'][1]:>10.4g}  "
                   f"{cells}  {th[0]:9.4f} [{th[1]:8.4f},{th[2]:9.4f}]")
        _print(f"smoothing: lambda = {[round(float(v), 6) for v in cov.lambdas.as_array()]}, c = {cov.c}, "
               f"ridge = {cov.ridge:g}, converged = {cov.converged}, iterations = {cov.iterations}")
    iv = natural_intervals(one, 1)
    _print(f"one-bin model: pi0 = {est:.4f} [{lo:.4f}, {hi:.4f}], xi = {iv['xi'][0]:.4f}, "
           f"theta = {iv['theta'][0]:.4f}")
    _print(f"Storey pi0 (lambda = {args.storey_lambda}) = {summary['storey_pi0']:.4f}")
    _print(f"wrote {path}")
    if (cov is not None and not cov.converged) or not one.converged:
        _print("warning: Newton-Raphson did not converge; see the fit artifact")
    return 0


# ---------------------------------------------------------------------------
# score


def cmd_score(args) -> int:
    doc, frozen, cov, one = load_fit_document(args.fit)
    st = doc["settings"]
    ds = read_dataset(args.input, null_dist=st.get("null_dist", "normal"))
    if st["bins"] == 1:
        layout = quantile_bins(ds, 1, min_bin_size=1)
    else:
        try:
            layout = quantile_bins(ds, st["bins"], st["zero_bin"], st["min_bin_size"])
        except ConfigError:
            layout = None
        if layout is None or layout.layout_hash() != doc["layout_hash"]:
            if not args.frozen_layout:
                raise ConfigError(
                    "input does not reproduce the fitted bin layout (layout hash mismatch); "
                    "use --frozen-layout to score new data against the fitted bin edges"
                )
            layout = BinLayout.from_dict(doc["layout"], ds.x)
    main = cov if cov is not None else one
    cols = score_arrays(ds, main, layout.assignment)
    base = score_arrays(ds, one, np.ones(ds.m, dtype=np.int64))
    calls = call_significant(cols, args.threshold, baseline=base)

    rows = (
        (cols["id"][i], cols["p"][i], cols["x"][i], cols["bin"][i], cols["prob"][i],
         cols["ci_lo"][i], cols["ci_hi"][i], cols["rank"][i], base["rank"][i], bool(calls.flags[i]))
        for i in range(ds.m)
    )
    path = args.output or _out(args, "scores.csv")
    write_table(path, SCORE_COLUMNS, rows)
    _print(f"threshold {args.threshold}: covariate-modulated significant = {calls.n_significant}, "
           f"one-bin significant = {calls.both + calls.baseline_only}")
    _print(f"both = {calls.both}, covariate-only = {calls.covariate_only}, "
           f"baseline-only = {calls.baseline_only}, neither = {calls.neither}")
    _print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    from covmod.simulation import (
        SimConfig,
        config_header,
        replicate_seed,
        replicate_summary,
        run_replicate,
        simulate,
    )

    cfg = SimConfig(m=args.m, pibar0=args.pibar0, pi0_at_0=args.pi0_at_0, pi0_at_1=args.pi0_at_1,
                    mu=args.mu, B=args.bins, c=args.smoothing_scale, seed=args.seed).validate()
    if args.replicates < 1:
        raise ConfigError("--replicates must be at least 1")
    header = config_header(cfg)
    seed0 = replicate_seed(cfg.seed, 0)
    ds, truth = simulate(SimConfig(**{**cfg.__dict__, "seed": seed0}))
    write_dataset(ds, _out(args, "dataset.csv"))
    write_table(_out(args, "truth.csv"), ("id", "x", "is_null", "true_posterior"),
                zip(ds.ids, ds.x, truth.is_null, truth.true_posterior), header)

    if args.replicates == 1:
        rep = run_replicate(cfg, seed0)
        mids = (np.arange(1, cfg.B + 1) - 0.5) / cfg.B
        from covmod.simulation import P_GRID, true_posterior
        rows = []
        for method in ("covariate", "onebin"):
            for j in range(cfg.B):
                tr = true_posterior(P_GRID, np.full_like(P_GRID, mids[j]), cfg)
                est = rep.covariate[j] if method == "covariate" else rep.onebin
                rows.extend((method, j + 1, p, tr[g], est[g]) for g, p in enumerate(P_GRID))
        write_table(_out(args, "summary.csv"), ("method", "bin", "p", "truth", "estimate"), rows,
                    header + ["# replicates=1"])
        _print(f"wrote raw curves for one replicate to {_out(args, 'summary.csv')}")
        return 0

    summ = replicate_summary(cfg, args.replicates, jobs=args.jobs)
    write_table(_out(args, "summary.csv"), ("method", "bin", "p", "truth", "q05", "median", "q95"),
                summ.rows(), header + [f"# replicates={args.replicates}", f"# failures={summ.failures}"])
    show = [j for j in (1, 3, 5, 7, 9) if j <= cfg.B] or [1]
    cov_err = summ.curve_error("covariate", show)
    one_err = summ.curve_error("onebin", show)
    _print(f"{len(summ.replicates)} replicates fitted, {summ.failures} failed")
    _print("bin  MAD(covariate median)  MAD(one-bin median)")
    for j in show:
        _print(f"{j:>3}  {cov_err[j]:21.5f}  {one_err[j]:19.5f}")
    _print(f"wrote {_out(args, 'summary.csv')}")
    return 0


# ---------------------------------------------------------------------------
# validate


def cmd_validate(args) -> int:
    from covmod.binning import quantile_bins as qb
    from covmod.fit import bin_data
    from covmod.simulation import SimConfig, simulate
    from covmod.validation import delta_grad_check, grad_check, mcmc_vs_fit, normalization_audit

    rng = np.random.default_rng(args.seed)
    report = {"seed": args.seed, "checks": []}

    cfg = SimConfig(m=2000, pibar0=0.5, pi0_at_0=0.9, pi0_at_1=0.1, B=5, seed=args.seed)
    ds, _ = simulate(cfg)
    layout = qb(ds, 5)
    fit = fit_joint(ds, layout)
    data = bin_data(ds, layout)

    worst = 0.0
    worst_point = None
    for _ in range(20):
        v = fit.mode + rng.normal(0.0, 0.5, fit.mode.size)
        e = grad_check(v, fit.lambdas, data, 1e-5, anchor=fit.init, ridge=fit.ridge)
        if e > worst:
            worst, worst_point = e, v.tolist()
    report["checks"].append({"name": "joint-gradient", "points": 20, "worst_rel_error": worst,
                             "tolerance": 1e-5, "pass": worst <= 1e-5, "worst_point": worst_point})

    worst = 0.0
    worst_point = None
    for _ in range(100):
        t = rng.uniform([-2, -2, -1], [2, 2, 2])
        p = float(rng.uniform(0.001, 0.5))
        e = delta_grad_check(p, t)
        if e > worst:
            worst, worst_point = e, [p] + t.tolist()
    report["checks"].append({"name": "delta-method-gradient", "points": 100, "worst_rel_error": worst,
                             "tolerance": 1e-5, "pass": worst <= 1e-5, "worst_point": worst_point})

    dev, prm = normalization_audit(args.cases, args.seed)
    report["checks"].append({"name": "density-normalisation", "cases": args.cases, "worst_deviation": dev,
                             "tolerance": 1e-6, "pass": dev <= 1e-6,
                             "worst_params": list(prm.as_tuple())})

    res, devs, tols = mcmc_vs_fit(ds, fit, args.mcmc_iters, args.mcmc_burn_in, args.seed)
    report["checks"].append({
        "name": "gaussian-vs-mcmc", "iters": args.mcmc_iters, "burn_in": args.mcmc_burn_in,
        "deviation_logit_pi0": devs.tolist(), "tolerance": tols.tolist(),
        "acceptance": res.acceptance.tolist(), "pass": bool(np.all(devs <= tols)),
    })
    path = _out(args, "validation_report.json")
    write_json(path, report)
    ok = True
    for c in report["checks"]:
        _print(f"{'PASS' if c['pass'] else 'FAIL'}  {c['name']}")
        ok &= c["pass"]
    _print(f"wrote {path}")
    return 0 if ok else 4


# ---------------------------------------------------------------------------
# plotdata

CURVE_GRID = np.concatenate([np.geomspace(1e-4, 0.1, 60), np.linspace(0.1, 1.0 - 1e-12, 41)[1:]])


def cmd_plotdata(args) -> int:
    doc, layout, cov, one = load_fit_document(args.fit)
    if args.scores is None or not os.path.exists(args.scores):
        raise ConfigError("plotdata needs an existing --scores file for the rank-change data")
    scores = read_table(args.scores)
    main = cov if cov is not None else one
    rep = layout.representative_x if cov is not None else one.layout.representative_x

    rows = []
    for j in range(1, main.B + 1):
        prob, lo, hi = posterior_curve(main, j, CURVE_GRID)
        rows.extend((j, p, prob[g], lo[g], hi[g]) for g, p in enumerate(CURVE_GRID))
    write_table(_out(args, "posterior_curves.csv"), ("bin", "p", "prob", "ci_lo", "ci_hi"), rows)

    cut = threshold_curve(main, args.threshold, doc["settings"].get("null_dist", "normal"))
    write_table(_out(args, "threshold_curve.csv"), ("bin", "x_lo", "x_hi", "z_cutoff"),
                ((j, rep[j - 1][0], rep[j - 1][1], cut[j - 1]) for j in range(1, main.B + 1)),
                [f"# threshold={args.threshold!r}"])

    rows = []
    for j in range(1, main.B + 1):
        est, lo, hi = pi0_interval(main, j)
        rows.append((j, rep[j - 1][0], rep[j - 1][1], est, lo, hi))
    write_table(_out(args, "pi0_steps.csv"), ("bin", "x_lo", "x_hi", "pi0", "ci_lo", "ci_hi"), rows)

    try:
        pairs = sorted(((int(r["rank_cov"]), int(r["rank_onebin"]), r["id"]) for r in scores))
    except (KeyError, ValueError):
        raise ConfigError(f"{args.scores} is not a scores file") from None
    write_table(_out(args, "rank_changes.csv"), ("id", "rank_cov", "rank_onebin", "displacement"),
                ((i, rc, ro, ro - rc) for rc, ro, i in pairs))
    _print(f"wrote 4 figure-data files to {args.output_dir}")
    return 0


# ---------------------------------------------------------------------------


def _finite_positive(s):
    v = float(s)
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {s!r}")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="covmod", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"covmod {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit the binned, smoothed mixture and its one-bin companion")
    f.add_argument("--input", required=True)
    f.add_argument("--fit", help="path of the fit artifact (default OUTPUT_DIR/fit.json)")
    f.add_argument("--bins", type=int, default=20)
    f.add_argument("--smoothing-scale", type=_finite_positive, default=1.0)
    f.add_argument("--zero-bin", type=float, default=None)
    f.add_argument("--min-bin-size", type=int, default=DEFAULT_MIN_BIN_SIZE)
    f.add_argument("--storey-lambda", type=float, default=0.5)
    f.add_argument("--null-dist", default="normal", help="'normal' or 't:<df>' for z-score input")
    f.add_argument("--output-dir", default=".")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("score", help="posterior probabilities, ranks and significance calls")
    s.add_argument("--input", required=True)
    s.add_argument("--fit", required=True)
    s.add_argument("--threshold", type=float, default=0.05)
    s.add_argument("--frozen-layout", action="store_true",
                   help="assign bins with the fitted edges instead of requiring the training layout")
    s.add_argument("--output", help="scores path (default OUTPUT_DIR/scores.csv)")
    s.add_argument("--output-dir", default=".")
    s.set_defaults(func=cmd_score)

    m = sub.add_parser("simulate", help="simulate datasets and summarise replicate fits")
    m.add_argument("--pibar0", type=float, default=0.5)
    m.add_argument("--pi0-at-0", type=float, default=0.55)
    m.add_argument("--pi0-at-1", type=float, default=0.45)
    m.add_argument("--m", type=int, default=30000)
    m.add_argument("--mu", type=float, default=2.0)
    m.add_argument("--bins", type=int, default=10)
    m.add_argument("--smoothing-scale", type=_finite_positive, default=1.0)
    m.add_argument("--replicates", type=int, default=100)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--jobs", type=int, default=1)
    m.add_argument("--output-dir", default=".")
    m.set_defaults(func=cmd_simulate)

    v = sub.add_parser("validate", help="derivative, normalisation and MCMC cross-checks")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--cases", type=int, default=100)
    v.add_argument("--mcmc-iters", type=int, default=50000)
    v.add_argument("--mcmc-burn-in", type=int, default=10000)
    v.add_argument("--output-dir", default=".")
    v.set_defaults(func=cmd_validate)

    p = sub.add_parser("plotdata", help="data files for posterior curves, thresholds, pi0 steps, ranks")
    p.add_argument("--fit", required=True)
    p.add_argument("--scores")
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("--output-dir", default=".")
    p.set_defaults(func=cmd_plotdata)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CovmodError as exc:
        print(f"covmod {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
