"""scikit-learn style wrappers.

Inputs are ``(n_samples, 2)`` integer arrays of ``(row, column)`` indices
with the observed values as targets.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .bases import build_family
from .model import FittedModel
from .numerics import SparseObservations
from .prox import check_lambdas
from .scalable import AlsOptions, fit_scalable
from .solver import SolveOptions, biased_softimpute, fit

__all__ = ["OMICRegressor", "SoftImputeRegressor", "BiasedSoftImputeRegressor", "DENSE_LIMIT"]

DENSE_LIMIT = 4_000_000


def _check_indices(X, shape=None):
    X = check_array(X, dtype=None, ensure_min_samples=1)
    if X.shape[1] != 2:
        raise ValueError(f"expected (row, column) pairs, got {X.shape[1]} columns")
    if not np.issubdtype(X.dtype, np.integer):
        if not np.all(np.equal(np.mod(X, 1), 0)):
            raise ValueError("indices must be integers")
    X = X.astype(np.int64)
    if X.min() < 0:
        raise ValueError("indices must be nonnegative")
    if shape is not None and (X[:, 0].max() >= shape[0] or X[:, 1].max() >= shape[1]):
        raise IndexError(f"index outside the fitted {shape[0]} x {shape[1]} matrix")
    return X


def _observations(X, y, shape):
    X, y = check_X_y(X, y, dtype=None, y_numeric=True)
    X = _check_indices(X)
    if shape is None:
        shape = (int(X[:, 0].max()) + 1, int(X[:, 1].max()) + 1)
    elif X[:, 0].max() >= shape[0] or X[:, 1].max() >= shape[1]:
        raise IndexError("index outside the declared matrix shape")
    return SparseObservations(tuple(shape), X[:, 0], X[:, 1], np.asarray(y, dtype=float))


class OMICRegressor(RegressorMixin, BaseEstimator):
    """Matrix completion with orthogonal side-information blocks.

    Parameters
    ----------
    family : {"softimpute", "bomic", "omicplus", "bomicplus"}
    lambdas : float or dict mapping ``(k, l)`` to a weight (``math.inf`` drops a block)
    shape : matrix shape; inferred from the largest indices when None
    user_communities, item_communities : CommunityAssignment, required by the
        community families
    solver : "auto", "dense" or "scalable"; auto uses the dense path up to
        ``DENSE_LIMIT`` matrix entries
    """

    def __init__(
        self,
        family="bomic",
        lambdas=1.0,
        shape=None,
        user_communities=None,
        item_communities=None,
        solver="auto",
        max_rank=20,
        tol=1e-5,
        max_iters=500,
        seed=0,
        clip=None,
    ):
        self.family = family
        self.lambdas = lambdas
        self.shape = shape
        self.user_communities = user_communities
        self.item_communities = item_communities
        self.solver = solver
        self.max_rank = max_rank
        self.tol = tol
        self.max_iters = max_iters
        self.seed = seed
        self.clip = clip

    def _family(self, shape):
        return build_family(self.family, *shape, self.user_communities, self.item_communities)

    def _weights(self):
        return self.lambdas

    def fit(self, X, y):
        obs = _observations(X, y, self.shape)
        family = self._family(obs.shape)
        opts = SolveOptions(tol=self.tol, max_iters=self.max_iters)
        lambdas = self._weights()
        if isinstance(lambdas, dict):
            lambdas = {tuple(k): v for k, v in lambdas.items()}
        solver = self.solver
        if solver == "auto":
            solver = "dense" if obs.shape[0] * obs.shape[1] <= DENSE_LIMIT else "scalable"
        if solver == "dense":
            comps, trace = fit(obs, family, lambdas, opts)
        elif solver == "scalable":
            als = AlsOptions(max_rank=self.max_rank, seed=self.seed)
            comps, trace = fit_scalable(obs, family, lambdas, als, opts)
        else:
            raise ValueError(f"unknown solver {self.solver!r}")
        self.model_ = FittedModel(
            family,
            comps,
            check_lambdas(family, lambdas),
            {
                "solver": solver,
                "seed": self.seed,
                "iterations": trace.n_iter,
                "converged": trace.converged,
                "final_objective": trace.final_objective,
            },
        )
        self.trace_ = trace
        self.shape_ = obs.shape
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = _check_indices(X, self.shape_)
        pred = self.model_.predict(X[:, 0], X[:, 1])
        if self.clip is not None:
            pred = np.clip(pred, *self.clip)
        return pred


class SoftImputeRegressor(OMICRegressor):
    """Nuclear-norm completion without side information."""

    def __init__(self, lam=1.0, shape=None, solver="auto", max_rank=20, tol=1e-5, max_iters=500, seed=0, clip=None):
        self.lam = lam
        self.shape = shape
        self.solver = solver
        self.max_rank = max_rank
        self.tol = tol
        self.max_iters = max_iters
        self.seed = seed
        self.clip = clip

    def _family(self, shape):
        return build_family("softimpute", *shape)

    def _weights(self):
        return self.lam


class BiasedSoftImputeRegressor(RegressorMixin, BaseEstimator):
    """Global, user and item means fitted first, then SoftImpute on the residuals."""

    def __init__(self, lam=1.0, shape=None, tol=1e-5, max_iters=500, clip=None):
        self.lam = lam
        self.shape = shape
        self.tol = tol
        self.max_iters = max_iters
        self.clip = clip

    def fit(self, X, y):
        obs = _observations(X, y, self.shape)
        if math.isnan(self.lam) or self.lam < 0:
            raise ValueError("lam must be >= 0")
        self.fit_ = biased_softimpute(obs, self.lam, SolveOptions(tol=self.tol, max_iters=self.max_iters))
        self.shape_ = obs.shape
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        X = _check_indices(X, self.shape_)
        pred = self.fit_.predict(X[:, 0], X[:, 1])
        if self.clip is not None:
            pred = np.clip(pred, *self.clip)
        return pred
