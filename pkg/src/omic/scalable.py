"""Rank-restricted solver that never forms an ``m x n`` matrix.

The imputation target is kept as ``sparse residual + low-rank model`` and the
block-wise thresholding is carried out per component, either exactly (when
one side of the component has a small explicit basis) or by alternating
ridge regressions on ``r``-column factors.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import sparse

from .bases import BasisFamily
from .numerics import (
    LowRankFactor,
    SparseObservations,
    SparsePlusLowRank,
    factor_diff_norm,
    splr_mul_left,
    splr_mul_right,
)
from .prox import check_lambdas, threshold_core
from .solver import SolveOptions, SolveTrace

__all__ = [
    "AlsOptions",
    "AlsResult",
    "ScalableTrace",
    "RankWarning",
    "svt_als",
    "fit_scalable",
    "model_dense",
]

_log = logging.getLogger(__name__)


class RankWarning(UserWarning):
    """The requested rank was clamped or may be truncating the solution."""


@dataclass
class AlsOptions:
    """Settings of the rank-restricted thresholding.

    ``exact_width``: components whose row or column block has an explicit
    basis of at most this many columns are thresholded exactly instead of
    by ALS (the constant and community directions of the bias families).
    """

    max_rank: int = 20
    inner_tol: float = 1e-4
    inner_max_iters: int = 100
    seed: int = 0
    exact_width: int = 256

    def __post_init__(self):
        if int(self.max_rank) < 1:
            raise ValueError("max_rank must be >= 1")
        if self.inner_tol < 0:
            raise ValueError("inner_tol must be >= 0")
        if int(self.inner_max_iters) < 1:
            raise ValueError("inner_max_iters must be >= 1")
        self.max_rank = int(self.max_rank)
        self.inner_max_iters = int(self.inner_max_iters)


class AlsResult(NamedTuple):
    components: dict
    state: dict
    inner_iters: dict
    capped: list


@dataclass
class ScalableTrace(SolveTrace):
    sweep_seconds: list = field(default_factory=list)
    inner_iters: list = field(default_factory=list)


def _exact_side(family, key, opts):
    k, l = key
    row, col = family.row_block(k), family.col_block(l)
    if row.compact and row.width <= opts.exact_width:
        return "row"
    if col.compact and col.width <= opts.exact_width:
        return "col"
    return None


def _exact_component(Z, family, key, lam):
    k, l = key
    row, col = family.row_block(k), family.col_block(l)
    if row.compact and (not col.compact or row.width <= col.width):
        X = row.basis()
        # (X^T Z Q_l)^T, an n x d1 matrix
        Ct = col.project(splr_mul_left(Z, X))
        U, s, Vt = threshold_core(Ct.T, lam)
        return LowRankFactor(X @ U, s, Vt.T)
    Y = col.basis()
    C = row.project(splr_mul_right(Z, Y))
    U, s, Vt = threshold_core(C, lam)
    return LowRankFactor(U, s, Y @ Vt.T)


def _orth(W, tol=1e-10):
    """Orthonormal basis of the range of ``W`` (rank-revealing)."""
    if W.shape[1] == 0:
        return W
    U, s, _ = np.linalg.svd(W, full_matrices=False)
    keep = s > tol * max(1.0, s[0] if s.size else 0.0)
    return U[:, keep]


def _init_state(row, col, r, seed, key):
    rng = np.random.default_rng([seed, key[0], key[1]])
    U = _orth(row.project(rng.standard_normal((row.size, r))))
    V = np.zeros((col.size, U.shape[1]))
    return U, np.ones(U.shape[1]), V


def _ridge(d, lam):
    denom = d**2 + lam
    return np.divide(d, denom, out=np.zeros_like(d), where=denom > 0)


def _als_component(Z, row, col, lam, r, opts, key, warm):
    if warm is not None and warm[0].shape[1] == r:
        U, d, V = (np.array(a, dtype=float) for a in warm)
        # dead directions never recover under the ridge update; revive them
        d = np.where(d > 1e-8 * max(1.0, d.max(initial=0.0)), d, 1.0)
    else:
        U, d, V = _init_state(row, col, r, opts.seed, key)

    iters = 0
    prev = LowRankFactor(U, d**2, V)
    # inner_tol == 0 runs a fixed number of sweeps without measuring the change
    for iters in range(1, opts.inner_max_iters + 1):
        # B = H^T U D (D^2 + lam)^-1, then rotate so that A B^T stays U D^2 V^T
        B = col.project(splr_mul_left(Z, row.project(U * _ridge(d, lam))))
        V, s, Rt = np.linalg.svd(B * d, full_matrices=False)
        U = U @ Rt.T
        d = np.sqrt(s)
        A = row.project(splr_mul_right(Z, col.project(V * _ridge(d, lam))))
        U, s, Rt = np.linalg.svd(A * d, full_matrices=False)
        V = V @ Rt.T
        d = np.sqrt(s)
        if opts.inner_tol == 0:
            continue
        cur = LowRankFactor(U, s, V)
        change = factor_diff_norm(prev, cur)
        prev = cur
        if change <= opts.inner_tol * max(cur.frobenius_norm(), 1e-300):
            break

    # exact singular values inside the column span found by ALS
    Vq = _orth(col.project(V))
    M = row.project(splr_mul_right(Z, Vq))
    Um, sm, Rt = np.linalg.svd(M, full_matrices=False)
    keep = sm > lam
    comp = LowRankFactor(Um[:, keep], sm[keep] - lam, Vq @ Rt[keep].T)
    return comp, (U, d, V), iters


def svt_als(Z: SparsePlusLowRank, family: BasisFamily, lambdas, opts=None, warm=None, warn=True):
    """Rank-restricted generalized SVT of the operator ``Z``.

    Returns an :class:`AlsResult` whose ``components`` map each ``(k, l)``
    with finite weight to an ambient :class:`LowRankFactor`; ``state`` holds
    the ALS factors for warm-starting the next call.
    """
    opts = opts or AlsOptions()
    if Z.shape != tuple(family.shape):
        raise ValueError(f"operator shape {Z.shape} does not match family {family.shape}")
    lambdas = check_lambdas(family, lambdas)
    warm = warm or {}
    comps, state, iters, capped = {}, {}, {}, []
    for key in family.nonempty_keys():
        lam = lambdas[key]
        if math.isinf(lam):
            continue
        if _exact_side(family, key, opts):
            comps[key] = _exact_component(Z, family, key, lam)
            continue
        row, col = family.row_block(key[0]), family.col_block(key[1])
        width = min(row.width, col.width)
        r = min(opts.max_rank, width)
        if r < opts.max_rank and warn:
            warnings.warn(
                f"rank {opts.max_rank} exceeds the width {width} of component {key}; using {r}",
                RankWarning,
                stacklevel=2,
            )
        comp, state[key], iters[key] = _als_component(
            Z, row, col, lam, r, opts, key, warm.get(key)
        )
        comps[key] = comp
        if comp.rank == r and r < width:
            capped.append(key)
    if capped and warn:
        warnings.warn(
            f"all {opts.max_rank} singular values survive thresholding for {capped}; "
            "the solution may be rank-truncated",
            RankWarning,
            stacklevel=2,
        )
    return AlsResult(comps, state, iters, capped)


def _pattern(obs):
    """CSR matrix over the distinct observed coordinates, data to be filled."""
    rows, cols, sums, counts = obs.aggregate()
    m, n = obs.shape
    indptr = np.zeros(m + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=m), out=indptr[1:])
    S = sparse.csr_matrix((np.zeros(rows.size), cols.astype(np.int64), indptr), shape=(m, n))
    return S, rows, cols, sums, counts


def _fitted(components, rows, cols):
    out = np.zeros(rows.size)
    for comp in components.values():
        out += comp.entries(rows, cols)
    return out


def _concat(components, shape):
    return LowRankFactor.concat(list(components.values()), *shape)


def _objective(components, lambdas, obs):
    penalty = sum(lambdas[key] * c.nuclear_norm() for key, c in components.items())
    resid = obs.values - _fitted(components, obs.rows, obs.cols)
    return penalty + 0.5 * float(resid @ resid)


def fit_scalable(
    obs: SparseObservations,
    family: BasisFamily,
    lambdas,
    als_opts=None,
    outer_opts=None,
    warm_start=None,
):
    """Iterative imputation on a sparse-plus-low-rank target.

    Each outer step sets the sparse part to the observed residuals of the
    current model, thresholds ``sparse + model`` with :func:`svt_als` and
    stops when the relative change of the model (measured on the factors)
    drops below ``outer_opts.tol``.  Returns ``(components, trace)`` with
    ambient :class:`LowRankFactor` components.
    """
    als_opts = als_opts or AlsOptions()
    outer_opts = outer_opts or SolveOptions()
    if obs.shape != tuple(family.shape):
        raise ValueError(f"observations {obs.shape} do not match family {family.shape}")
    lambdas = check_lambdas(family, lambdas)
    if all(math.isinf(v) for v in lambdas.values()):
        raise ValueError("at least one component needs a finite weight")
    shape = tuple(family.shape)
    step = 1.0 / obs.max_multiplicity
    lam_step = {key: lam * step for key, lam in lambdas.items()}

    for key in family.nonempty_keys():
        if math.isinf(lambdas[key]) or _exact_side(family, key, als_opts):
            continue
        width = min(family.row_block(key[0]).width, family.col_block(key[1]).width)
        if als_opts.max_rank > width:
            warnings.warn(
                f"rank {als_opts.max_rank} exceeds the width {width} of component {key}; "
                f"using {width}",
                RankWarning,
                stacklevel=2,
            )

    S, rows, cols, sums, counts = _pattern(obs)
    comps = {k: c for k, c in (warm_start or {}).items() if not math.isinf(lambdas[k])}
    state = {}
    trace = ScalableTrace()
    if outer_opts.record_trace:
        trace.objective.append(_objective(comps, lambdas, obs))
    capped = []
    for it in range(1, outer_opts.max_iters + 1):
        t0 = time.perf_counter()
        S.data[:] = step * (sums - counts * _fitted(comps, rows, cols))
        old = _concat(comps, shape)
        Z = SparsePlusLowRank(S, old)
        res = svt_als(Z, family, lam_step, als_opts, state, warn=False)
        comps, state, capped = res.components, res.state, res.capped
        new = _concat(comps, shape)
        delta = factor_diff_norm(old, new)
        scale = max(1.0, old.frobenius_norm())
        trace.sweep_seconds.append(time.perf_counter() - t0)
        trace.inner_iters.append(dict(res.inner_iters))
        trace.n_iter = it
        if outer_opts.record_trace:
            trace.objective.append(_objective(comps, lambdas, obs))
            trace.change.append(delta)
        if delta / scale < outer_opts.tol:
            trace.converged = True
            break
    if not trace.converged:
        _log.warning("scalable solver stopped after %d iterations without converging", trace.n_iter)
    if capped:
        warnings.warn(
            f"all {als_opts.max_rank} singular values survive thresholding for {capped}; "
            "the solution may be rank-truncated",
            RankWarning,
            stacklevel=2,
        )
    return comps, trace


def model_dense(components, shape):
    """Dense sum of ambient factors (small problems and tests only)."""
    return _concat(components, shape).to_dense()
