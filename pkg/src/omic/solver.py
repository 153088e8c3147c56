"""Dense reference solver: iterative imputation with generalized SVT.

Each step fills the unobserved entries with the current estimate and applies
the block-wise thresholding operator to the completed matrix.  This path
keeps full ``m x n`` iterates and is meant for desk-scale problems and as
the oracle for :mod:`omic.scalable`.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .bases import BasisFamily, build_identity
from .numerics import LowRankFactor, SparseObservations
from .prox import _cores, _gsvt, assemble, check_lambdas, decompose

__all__ = [
    "SolveOptions",
    "SolveTrace",
    "PathPoint",
    "BiasedFit",
    "objective",
    "fit",
    "fit_path",
    "default_grid",
    "default_ties",
    "select_on_validation",
    "softimpute",
    "biased_softimpute",
    "component_nuclear_norm",
    "fit_biases",
    "lambda_key",
]

_log = logging.getLogger(__name__)


@dataclass
class SolveOptions:
    """Stopping rule: relative iterate change below ``tol`` or ``max_iters`` steps."""

    tol: float = 1e-5
    max_iters: int = 500
    record_trace: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be >= 1")
        self.max_iters = int(self.max_iters)


@dataclass
class SolveTrace:
    """Per-iteration objective values and iterate changes.

    ``objective[i]`` is the loss at the i-th iterate (index 0 is the starting
    point); ``change[i]`` is ``||Z^{i+1} - Z^i||_F``.
    """

    objective: list = field(default_factory=list)
    change: list = field(default_factory=list)
    converged: bool = False
    n_iter: int = 0

    @property
    def final_objective(self):
        return self.objective[-1] if self.objective else math.nan

    def is_monotone(self, slack=1e-9):
        obj = np.asarray(self.objective)
        return bool(np.all(np.diff(obj) <= slack * np.maximum(1.0, np.abs(obj[:-1]))))


def component_nuclear_norm(comp):
    if isinstance(comp, LowRankFactor):
        return comp.nuclear_norm()
    comp = np.asarray(comp)
    if comp.size == 0:
        return 0.0
    if min(comp.shape) == 1:
        return float(np.linalg.norm(comp))
    return float(np.linalg.svd(comp, compute_uv=False).sum())


def _squared_loss(obs: SparseObservations, Z):
    resid = obs.values - Z[obs.rows, obs.cols]
    return 0.5 * float(resid @ resid)


def objective(obs: SparseObservations, model, family: BasisFamily, lambdas):
    """Penalized squared loss ``sum lam_kl ||M_kl||_* + 1/2 sum_Omega (R - F)^2``.

    ``model`` maps component keys to cores or low-rank factors; duplicated
    observations count once per occurrence.
    """
    lambdas = check_lambdas(family, lambdas)
    penalty = 0.0
    for key, comp in model.items():
        nuc = component_nuclear_norm(comp)
        lam = lambdas[key]
        if math.isinf(lam):
            if nuc > 0:
                raise ValueError(f"component {key} is nonzero but its weight is infinite")
            continue
        penalty += lam * nuc
    if obs.nnz == 0:
        return penalty
    if all(isinstance(c, LowRankFactor) for c in model.values()):
        fitted = np.zeros(obs.nnz)
        for comp in model.values():
            fitted += comp.entries(obs.rows, obs.cols)
        resid = obs.values - fitted
        return penalty + 0.5 * float(resid @ resid)
    return penalty + _squared_loss(obs, assemble(family, model))


def _objective_dense(obs, Z, family, lambdas):
    """Objective of a dense iterate (decomposes it first)."""
    cores = decompose(Z, family)
    for key, core in cores.items():
        if math.isinf(lambdas[key]) and np.abs(core).max(initial=0.0) > 1e-12:
            return math.inf
    penalty = sum(
        lambdas[key] * component_nuclear_norm(core)
        for key, core in cores.items()
        if not math.isinf(lambdas[key])
    )
    return penalty + _squared_loss(obs, Z)


class _DenseResult(NamedTuple):
    components: dict
    trace: SolveTrace
    Z: np.ndarray


def _impute_target(Z, agg, step):
    """``Z`` with the observed entries moved toward the data.

    With single observations (``step == 1``) this replaces them by the data,
    which is the usual imputation step; repeated entries take a gradient step
    of size ``1 / max multiplicity`` on their summed loss.
    """
    rows, cols, sums, counts = agg
    T = Z.copy()
    current = Z[rows, cols]
    T[rows, cols] = current + step * (sums - counts * current)
    return T


def _fit_dense(obs, family, lambdas, opts, warm_start=None):
    m, n = family.shape
    if obs.shape != (m, n):
        raise ValueError(f"observations {obs.shape} do not match family {family.shape}")
    lambdas = check_lambdas(family, lambdas)
    if all(math.isinf(v) for v in lambdas.values()):
        raise ValueError("at least one component needs a finite weight")
    opts = opts or SolveOptions()
    agg = obs.aggregate()
    step = 1.0 / obs.max_multiplicity
    lam_step = {key: lam * step for key, lam in lambdas.items()}

    if warm_start is None:
        Z = np.zeros((m, n))
    else:
        Z = np.array(warm_start, dtype=float)
        if Z.shape != (m, n):
            raise ValueError(f"warm start has shape {Z.shape}, expected {(m, n)}")

    trace = SolveTrace()
    if opts.record_trace:
        start = _squared_loss(obs, Z) if warm_start is None else _objective_dense(
            obs, Z, family, lambdas
        )
        trace.objective.append(start)

    comps = {}
    for it in range(1, opts.max_iters + 1):
        comps, nuclear = _gsvt(family, _impute_target(Z, agg, step), lam_step)
        Z_new = assemble(family, comps)
        delta = float(np.linalg.norm(Z_new - Z))
        scale = max(1.0, float(np.linalg.norm(Z)))
        Z = Z_new
        trace.n_iter = it
        if opts.record_trace:
            penalty = sum(lambdas[key] * nuclear[key] for key in nuclear)
            trace.objective.append(penalty + _squared_loss(obs, Z))
            trace.change.append(delta)
        if delta / scale < opts.tol:
            trace.converged = True
            break
    if not trace.converged:
        _log.warning("dense solver stopped after %d iterations without converging", trace.n_iter)
    return _DenseResult(comps, trace, Z)


def fit(obs: SparseObservations, family: BasisFamily, lambdas, opts=None, warm_start=None):
    """Minimize the penalized loss by iterative imputation.

    Starts from zero unless ``warm_start`` (a dense ``m x n`` matrix) is given.
    Returns ``(components, trace)``; failure to converge within
    ``opts.max_iters`` is reported through ``trace.converged``.
    """
    res = _fit_dense(obs, family, lambdas, opts, warm_start)
    return res.components, res.trace


@dataclass
class PathPoint:
    lambdas: dict
    components: dict
    trace: SolveTrace
    Z: np.ndarray = field(repr=False, default=None)


def lambda_key(lambdas):
    return tuple(sorted(lambdas.items()))


def default_ties(family: BasisFamily):
    """Tie the symmetric bias-type components ``(1, l)`` and ``(l, 1)``."""
    n_blocks = min(family.K, family.L)
    return [((1, l), (l, 1)) for l in range(2, n_blocks + 1)]


def default_grid(obs: SparseObservations, family: BasisFamily, num=8, ties=None, zero_global=True):
    """Log-spaced candidate weights per component.

    Each grid runs from ``sigma_max / 2`` down to ``sigma_max / 100`` where
    ``sigma_max`` is the top singular value of the component's core of the
    zero-filled observation matrix; tied components share the grid of the
    larger one.  The ``(1, 1)`` weight is pinned to zero by default.
    """
    R = np.zeros(family.shape)
    np.add.at(R, (obs.rows, obs.cols), obs.values)
    cores = _cores(family, R, family.nonempty_keys())
    smax = {}
    for key, core in cores.items():
        s = np.linalg.norm(core, 2) if min(core.shape) > 1 else np.linalg.norm(core)
        smax[key] = float(s)
    ties = default_ties(family) if ties is None else ties
    for group in ties:
        top = max(smax.get(key, 0.0) for key in group)
        for key in group:
            if key in smax:
                smax[key] = top
    grid = {}
    for key in family.keys():
        if key not in smax:
            grid[key] = [math.inf]
        elif key == (1, 1) and zero_global:
            grid[key] = [0.0]
        elif smax[key] == 0:
            grid[key] = [0.0]
        else:
            grid[key] = list(np.geomspace(smax[key] / 2, smax[key] / 100, num))
    return grid


def _grid_product(family, grid, ties):
    keys = family.keys()
    combos = itertools.product(*(grid[key] for key in keys))
    for values in combos:
        lam = dict(zip(keys, values))
        if all(len({lam[key] for key in group if key in lam}) <= 1 for group in ties):
            yield lam


def fit_path(obs, family: BasisFamily, grid, opts=None, ties=()):
    """Warm-started solutions over a product grid of weights.

    Phase 1 solves each component alone (all other weights infinite) along
    its own candidate list, in decreasing order, each solve starting from the
    previous one.  Phase 2 starts every grid point from the sum of the
    matching phase-1 solutions.  ``ties`` lists groups of keys that must take
    equal values; grid points violating a tie are skipped.

    Returns a dict keyed by ``lambda_key(lambdas)`` with :class:`PathPoint`
    values.
    """
    missing = set(family.keys()) - set(grid)
    if missing:
        raise ValueError(f"grid is missing components {sorted(missing)}")
    grid = {key: sorted((float(v) for v in vals), reverse=True) for key, vals in grid.items()}
    if any(len(v) == 0 for v in grid.values()):
        raise ValueError("every component needs at least one candidate weight")
    m, n = family.shape

    singles = {}
    for key in family.nonempty_keys():
        Z = None
        for lam in grid[key]:
            if math.isinf(lam):
                continue
            alone = {other: math.inf for other in family.keys()}
            alone[key] = lam
            res = _fit_dense(obs, family, alone, opts, warm_start=Z)
            Z = res.Z
            singles[(key, lam)] = Z

    out = {}
    for lam in _grid_product(family, grid, ties):
        if all(math.isinf(v) for v in lam.values()):
            continue
        start = np.zeros((m, n))
        for key, value in lam.items():
            if (key, value) in singles:
                start += singles[(key, value)]
        res = _fit_dense(obs, family, lam, opts, warm_start=start)
        out[lambda_key(lam)] = PathPoint(lam, res.components, res.trace, res.Z)
    return out


def _rmse_dense(Z, obs):
    resid = obs.values - Z[obs.rows, obs.cols]
    return float(np.sqrt(np.mean(resid**2)))


def select_on_validation(train, validation, family, grid=None, opts=None, ties=None):
    """Pick the grid point with the lowest validation RMSE.

    Returns ``(best_point, scores)`` where ``scores`` maps lambda keys to
    validation RMSE.
    """
    ties = default_ties(family) if ties is None else ties
    grid = default_grid(train, family, ties=ties) if grid is None else grid
    path = fit_path(train, family, grid, opts, ties)
    if not path:
        raise ValueError("the grid has no admissible point")
    scores = {key: _rmse_dense(point.Z, validation) for key, point in path.items()}
    best = min(scores, key=scores.get)
    return path[best], scores


def softimpute(obs: SparseObservations, lam, opts=None, warm_start=None):
    """Nuclear-norm matrix completion: one identity block per side."""
    family = build_identity(*obs.shape)
    comps, trace = fit(obs, family, {(1, 1): lam}, opts, warm_start)
    return comps, trace


class BiasedFit(NamedTuple):
    global_bias: float
    user_bias: np.ndarray
    item_bias: np.ndarray
    components: dict
    trace: SolveTrace

    def dense(self):
        m, n = self.user_bias.size, self.item_bias.size
        lowrank = self.components.get((1, 1))
        Z = np.zeros((m, n)) if lowrank is None else np.asarray(lowrank)
        return self.global_bias + self.user_bias[:, None] + self.item_bias[None, :] + Z

    def predict(self, rows, cols):
        return self.dense()[rows, cols]


def _group_mean(index, values, size):
    sums = np.bincount(index, weights=values, minlength=size)
    counts = np.bincount(index, minlength=size)
    return np.divide(sums, counts, out=np.zeros(size), where=counts > 0)


def fit_biases(obs: SparseObservations):
    """Global mean, then user means of residuals, then item means of what is left."""
    m, n = obs.shape
    g = float(obs.values.mean()) if obs.nnz else 0.0
    resid = obs.values - g
    u = _group_mean(obs.rows, resid, m)
    resid = resid - u[obs.rows]
    b = _group_mean(obs.cols, resid, n)
    return g, u, b


def biased_softimpute(obs: SparseObservations, lam, opts=None):
    """Baseline: fit biases first, then SoftImpute on the residuals."""
    g, u, b = fit_biases(obs)
    resid = obs.values - g - u[obs.rows] - b[obs.cols]
    comps, trace = softimpute(obs.with_values(resid), lam, opts)
    return BiasedFit(g, u, b, comps, trace)
