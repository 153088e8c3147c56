"""Orthogonal inductive matrix completion.

Nuclear-norm matrix completion where the predictor is split into components
living in mutually orthogonal row/column subspaces (global mean, communities,
residual), each with its own regularization weight.
"""

from .bases import (
    BasisFamily,
    CommunityAssignment,
    build_bomic,
    build_bomicplus,
    build_explicit,
    build_family,
    build_identity,
    build_omicplus,
    validate,
)
from .data import gen_bound_matrix, gen_synthetic, load_communities, load_dataset, load_triplets, split
from .estimator import BiasedSoftImputeRegressor, OMICRegressor, SoftImputeRegressor
from .evaluation import bias_deviation, bound_value, rmse, si_bias_postprocess, spearman
from .model import FittedModel, load, save
from .numerics import LowRankFactor, SparseObservations, SparsePlusLowRank
from .prox import decompose, generalized_svt, svt
from .scalable import AlsOptions, fit_scalable, svt_als
from .solver import SolveOptions, biased_softimpute, fit, fit_path, objective, softimpute

__version__ = "0.1.0"

__all__ = [
    "AlsOptions",
    "BasisFamily",
    "BiasedSoftImputeRegressor",
    "CommunityAssignment",
    "FittedModel",
    "LowRankFactor",
    "OMICRegressor",
    "SoftImputeRegressor",
    "SolveOptions",
    "SparseObservations",
    "SparsePlusLowRank",
    "bias_deviation",
    "biased_softimpute",
    "bound_value",
    "build_bomic",
    "build_bomicplus",
    "build_explicit",
    "build_family",
    "build_identity",
    "build_omicplus",
    "decompose",
    "fit",
    "fit_path",
    "fit_scalable",
    "gen_bound_matrix",
    "gen_synthetic",
    "generalized_svt",
    "load",
    "load_communities",
    "load_dataset",
    "load_triplets",
    "objective",
    "rmse",
    "save",
    "si_bias_postprocess",
    "softimpute",
    "spearman",
    "split",
    "svt",
    "svt_als",
    "validate",
]
