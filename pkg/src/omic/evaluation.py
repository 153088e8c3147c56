"""Metrics, bias diagnostics, the sample-complexity bound and its empirical counterpart."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .bases import build_bomic, build_omicplus
from .data import split
from .model import FittedModel
from .numerics import SparseObservations
from .solver import (
    SolveOptions,
    _fit_dense,
    biased_softimpute,
    default_grid,
    fit_biases,
    select_on_validation,
    softimpute,
)

__all__ = [
    "MetricsReport",
    "SampleComplexityResult",
    "rmse",
    "spearman",
    "bias_deviation",
    "si_bias_postprocess",
    "bound_value",
    "calibrate_lambdas",
    "empirical_sample_complexity",
    "compare_on_synthetic",
]

SI_DENSE_LIMIT = 4_000_000


@dataclass
class MetricsReport:
    rmse: float
    spc: float
    mbd: float | None = None
    ubd: float | None = None
    ibd: float | None = None

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}


def _pair(truth, pred):
    truth = np.asarray(truth, dtype=float).ravel()
    pred = np.asarray(pred, dtype=float).ravel()
    if truth.shape != pred.shape:
        raise ValueError(f"length mismatch: {truth.size} vs {pred.size}")
    return truth, pred


def rmse(truth, pred):
    truth, pred = _pair(truth, pred)
    if truth.size == 0:
        raise ValueError("rmse of an empty set is undefined")
    return float(np.sqrt(np.mean((truth - pred) ** 2)))


def spearman(x, y):
    """Pearson correlation of average ranks; NaN when either side is constant."""
    x, y = _pair(x, y)
    if x.size < 2:
        raise ValueError("spearman needs at least two values")
    rx = stats.rankdata(x) - (x.size + 1) / 2
    ry = stats.rankdata(y) - (y.size + 1) / 2
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0:
        return math.nan
    return float(np.clip(rx @ ry / denom, -1.0, 1.0))


def bias_deviation(truth, est):
    """``(|c - c_hat|, ||u - u_hat||, ||b - b_hat||)`` for ``(c, u, b)`` triples."""
    c, u, b = truth
    ch, uh, bh = est
    u, uh = np.asarray(u, dtype=float), np.asarray(uh, dtype=float)
    b, bh = np.asarray(b, dtype=float), np.asarray(bh, dtype=float)
    if u.shape != uh.shape or b.shape != bh.shape:
        raise ValueError("bias vectors have mismatched dimensions")
    return abs(float(c) - float(ch)), float(np.linalg.norm(u - uh)), float(np.linalg.norm(b - bh))


def si_bias_postprocess(R_hat):
    """Biases read off a dense prediction.

    Global mean, then row means and column means of ``R_hat`` minus the
    global mean (both against the same residual matrix).
    """
    R_hat = np.asarray(R_hat, dtype=float)
    if R_hat.size > SI_DENSE_LIMIT:
        raise ValueError(f"matrix with {R_hat.size} entries exceeds the {SI_DENSE_LIMIT} limit")
    g = float(R_hat.mean())
    D = R_hat - g
    return g, D.mean(axis=1), D.mean(axis=0)


def bound_value(a, b, m, n, r_map, C_map):
    """Order-level uniform-marginal sample-complexity bound for a two-block family.

    ``C11^2 b r11 log b + C12^2 n r12 log n + C21^2 m r21 log m + C22^2 m r22 log m``
    with ``m >= n`` and ``b >= a`` (arguments are swapped otherwise).  The
    universal constant and the accuracy factor are dropped, so only
    comparisons between configurations are meaningful.
    """
    a, b, m, n = int(a), int(b), int(m), int(n)
    if min(a, b, m, n) < 1:
        raise ValueError("dimensions must be positive")
    r = {key: float(r_map.get(key, 0)) for key in ((1, 1), (1, 2), (2, 1), (2, 2))}
    C = {key: float(C_map.get(key, 0)) for key in r}
    for key in r:
        if C[key] < 0 or r[key] < 0:
            raise ValueError(f"negative rank or bound for component {key}")
        if C[key] > 0 and r[key] <= 0:
            raise ValueError(f"component {key} has a positive bound but rank {r[key]}")
    if m < n:
        m, n = n, m
        r[(1, 2)], r[(2, 1)] = r[(2, 1)], r[(1, 2)]
        C[(1, 2)], C[(2, 1)] = C[(2, 1)], C[(1, 2)]
    b = max(a, b)
    return (
        C[(1, 1)] ** 2 * b * r[(1, 1)] * math.log(b)
        + C[(1, 2)] ** 2 * n * r[(1, 2)] * math.log(n)
        + C[(2, 1)] ** 2 * m * r[(2, 1)] * math.log(m)
        + C[(2, 2)] ** 2 * m * r[(2, 2)] * math.log(m)
    )


def _obs_from_flat(R, flat):
    n = R.shape[1]
    rows, cols = np.divmod(np.asarray(flat, dtype=np.int64), n)
    return SparseObservations(R.shape, rows, cols, R[rows, cols])


def calibrate_lambdas(R, users, items, fraction=0.3, seed=0, num=6, opts=None):
    """Pick ``lambda_11`` and ``lambda_22`` of the community family once.

    Observes a uniform ``fraction`` of ``R``, holds out 20% of it, and scans
    a log grid for both weights with the cross components disabled.
    Returns the weight dict.
    """
    m, n = R.shape
    rng = np.random.default_rng(seed)
    flat = rng.choice(m * n, int(round(fraction * m * n)), replace=False)
    obs = _obs_from_flat(R, flat)
    train, val, _ = split(obs, (0.8, 0.2, 0.0), seed)
    family = build_omicplus(users, items)
    grid = default_grid(train, family, num=num, ties=(), zero_global=False)
    grid[(1, 2)] = [math.inf]
    grid[(2, 1)] = [math.inf]
    best, _ = select_on_validation(train, val, family, grid, opts or SolveOptions(tol=1e-4), ties=())
    return dict(best.lambdas)


@dataclass
class SampleComplexityResult:
    n_epsilon: int | None
    counts: list = field(default_factory=list)
    rmses: list = field(default_factory=list)

    @property
    def reached(self):
        return self.n_epsilon is not None


def _schedule(total, start, factor):
    counts = []
    cur = max(1, int(start))
    while cur < total:
        counts.append(cur)
        cur = max(cur + 1, int(math.ceil(cur * factor)))
    counts.append(total)
    return counts


def empirical_sample_complexity(
    R,
    family,
    lambdas,
    ordering,
    epsilon=0.1,
    start=None,
    factor=1.3,
    opts=None,
):
    """Smallest prefix of ``ordering`` whose fit reaches held-out RMSE ``<= epsilon``.

    Prefix sizes follow a geometric schedule; each fit starts from the
    previous solution.  RMSE is measured on the entries not yet observed
    (on the whole matrix once everything eligible is observed).
    ``n_epsilon`` is None when the threshold is never met.
    """
    R = np.asarray(R, dtype=float)
    m, n = R.shape
    ordering = np.asarray(ordering, dtype=np.int64)
    opts = opts or SolveOptions(tol=1e-4, max_iters=300)
    start = start or max(10, len(ordering) // 200)
    result = SampleComplexityResult(None)
    Z = None
    for count in _schedule(len(ordering), start, factor):
        seen = ordering[:count]
        obs = _obs_from_flat(R, seen)
        res = _fit_dense(obs, family, lambdas, opts, warm_start=Z)
        Z = res.Z
        held = np.ones(m * n, dtype=bool)
        held[seen] = False
        err = rmse(R.ravel()[held], Z.ravel()[held]) if held.any() else rmse(R, Z)
        result.counts.append(int(count))
        result.rmses.append(err)
        if err <= epsilon:
            result.n_epsilon = int(count)
            break
    return result


def _report(R, pred, mask, biases_true, biases_est):
    held = ~mask
    mbd, ubd, ibd = bias_deviation(biases_true, biases_est)
    return MetricsReport(
        rmse(R[held], pred[held]), spearman(R[held], pred[held]), mbd, ubd, ibd
    )


def compare_on_synthetic(instance, grid_size=6, validation=0.1, seed=0, opts=None):
    """BOMIC, biased SoftImpute and SoftImpute on one synthetic instance.

    Each method picks its weights on a held-out part of the observed entries,
    is refit on all of them, and is scored on the unobserved entries.
    Returns ``{method: MetricsReport}``.
    """
    opts = opts or SolveOptions(tol=1e-5, max_iters=1000)
    R = instance.R
    m, n = R.shape
    obs = instance.observations
    mask = obs.mask()
    truth = instance.true_biases()
    train, val, _ = split(obs, (1 - validation, validation, 0.0), seed)
    out = {}

    family = build_bomic(m, n)
    grid = default_grid(train, family, num=grid_size)
    best, _ = select_on_validation(train, val, family, grid, opts)
    res = _fit_dense(obs, family, best.lambdas, opts)
    model = FittedModel(family, res.components, best.lambdas)
    out["BOMIC"] = _report(R, res.Z, mask, truth, model.extract_biases())

    def scan(fit_one, train_obs, target):
        top = np.linalg.norm(target.to_csr().toarray(), 2)
        best_lam, best_err = None, math.inf
        for lam in np.geomspace(top / 2, top / 100, grid_size):
            pred = fit_one(train_obs, lam)
            err = rmse(val.values, pred[val.rows, val.cols])
            if err < best_err:
                best_lam, best_err = lam, err
        return best_lam

    def bsi_dense(train_obs, lam):
        return biased_softimpute(train_obs, lam, opts).dense()

    def si_dense(train_obs, lam):
        comps, _ = softimpute(train_obs, lam, opts)
        return comps.get((1, 1), np.zeros((m, n)))

    g, u, b = fit_biases(train)
    lam = scan(bsi_dense, train, train.with_values(train.values - g - u[train.rows] - b[train.cols]))
    fitted = biased_softimpute(obs, lam, opts)
    out["B-SI"] = _report(
        R, fitted.dense(), mask, truth, (fitted.global_bias, fitted.user_bias, fitted.item_bias)
    )

    lam = scan(si_dense, train, train)
    pred = si_dense(obs, lam)
    out["SI"] = _report(R, pred, mask, truth, si_bias_postprocess(pred))
    return out
