"""Covariate-modulated posterior probabilities for large-scale multiple testing.

A uniform-beta mixture is fitted to p-values within covariate bins, the bins
are tied together by random-walk smoothness priors on the transformed mixture
parameters, and the joint posterior is approximated by a Gaussian centred at
its mode.
"""
from covmod.errors import (
    CovmodError,
    InputError,
    ParseError,
    ConfigError,
    FitError,
    TransformError,
    DiagnosticError,
)
from covmod.ingest import TestRecord, Dataset, z_to_p, parse_dataset, read_dataset, write_dataset
from covmod.binning import BinLayout, quantile_bins, assign_bin
from covmod.mixture import (
    BinParams,
    TransformedParams,
    to_transformed,
    to_natural,
    mix_density,
    bin_log_likelihood,
    bin_grad_hess,
)
from covmod.fit import (
    SmoothingParams,
    ModelFit,
    fit_bin_initial,
    estimate_lambdas,
    log_posterior,
    fit_joint,
    marginal,
)
from covmod.report import (
    PosteriorScore,
    RankPair,
    posterior_prob,
    score_all,
    fit_one_bin,
    storey_pi0,
    call_significant,
    rank_compare,
    threshold_curve,
)
from covmod.kernels import BACKEND

__version__ = "0.1.0"
