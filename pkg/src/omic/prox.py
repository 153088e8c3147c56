"""Singular value thresholding and the block-wise generalization over a basis family."""

from __future__ import annotations

import math

import numpy as np

from .bases import BasisFamily
from .numerics import LowRankFactor, _as_finite_matrix

__all__ = [
    "check_lambdas",
    "svt",
    "threshold_core",
    "generalized_svt",
    "generalized_svt_projected",
    "decompose",
    "assemble",
    "component_matrix",
]


def check_lambdas(family: BasisFamily, lambdas, default=None):
    """Normalize regularization weights to a dict over every ``(k, l)`` key.

    ``lambdas`` may be a scalar (same weight everywhere) or a mapping; keys
    missing from the mapping take ``default`` (an error when ``default`` is
    None).  ``math.inf`` drops a component from the predictor.
    """
    keys = family.keys()
    if np.isscalar(lambdas):
        out = {key: float(lambdas) for key in keys}
    else:
        unknown = set(lambdas) - set(keys)
        if unknown:
            raise ValueError(f"unknown components {sorted(unknown)} for family {family.kind!r}")
        out = {}
        for key in keys:
            if key in lambdas:
                out[key] = float(lambdas[key])
            elif default is not None:
                out[key] = float(default)
            else:
                raise ValueError(f"no regularization weight for component {key}")
    for key, lam in out.items():
        if math.isnan(lam) or lam < 0:
            raise ValueError(f"weight for {key} must be >= 0, got {lam}")
    return out


def threshold_core(C, lam):
    """SVD of ``S_lam(C)`` keeping only the positive singular values.

    Returns ``(U, s, Vt)``.  Row/column vectors skip the SVD: their only
    singular value is the Euclidean norm.
    """
    C = np.asarray(C, dtype=float)
    d1, d2 = C.shape
    if d1 == 0 or d2 == 0:
        return np.zeros((d1, 0)), np.zeros(0), np.zeros((0, d2))
    if d1 == 1 or d2 == 1:
        norm = float(np.linalg.norm(C))
        if norm <= lam or norm == 0.0:
            return np.zeros((d1, 0)), np.zeros(0), np.zeros((0, d2))
        if d2 == 1:
            return C / norm, np.array([norm - lam]), np.ones((1, 1))
        return np.ones((1, 1)), np.array([norm - lam]), C / norm
    U, s, Vt = np.linalg.svd(C, full_matrices=False)
    keep = s > lam
    return U[:, keep], s[keep] - lam, Vt[keep]


def svt(A, lam):
    """``S_lam(A) = sum_i (sigma_i - lam)_+ u_i v_i^T``."""
    A = _as_finite_matrix(A)
    if lam < 0:
        raise ValueError(f"threshold must be >= 0, got {lam}")
    U, s, Vt = threshold_core(A, lam)
    return (U * s) @ Vt


def _cores(family, Z, keys):
    """``{(k, l): X_k^T Z Y_l}`` for the requested keys."""
    left = {}
    out = {}
    for k, l in keys:
        if k not in left:
            left[k] = family.row_block(k).coords(Z)
        out[(k, l)] = family.col_block(l).coords(left[k].T).T
    return out


def assemble(family: BasisFamily, components):
    """Dense ``sum_{k,l} X_k M_kl Y_l^T``; accepts cores or ambient low-rank factors."""
    m, n = family.shape
    Z = np.zeros((m, n))
    by_row = {}
    for (k, l), comp in components.items():
        if isinstance(comp, LowRankFactor):
            Z += comp.to_dense()
            continue
        part = family.col_block(l).expand(np.asarray(comp).T).T
        by_row[k] = by_row.get(k, 0) + part
    for k, part in by_row.items():
        Z += family.row_block(k).expand(part)
    return Z


def component_matrix(family: BasisFamily, key, comp):
    """The ambient ``m x n`` matrix of a single component."""
    return assemble(family, {key: comp})


def _gsvt(family, Z, lambdas):
    """Shared kernel: cores of ``S_Lambda(Z)`` plus their nuclear norms."""
    keys = [
        key
        for key in family.nonempty_keys()
        if not math.isinf(lambdas[key])
    ]
    cores = _cores(family, Z, keys)
    out = {}
    nuclear = {}
    for key in keys:
        U, s, Vt = threshold_core(cores[key], lambdas[key])
        out[key] = (U * s) @ Vt
        nuclear[key] = float(s.sum())
    return out, nuclear


def generalized_svt(Z, family: BasisFamily, lambdas):
    """Apply ``S_lambda_kl`` to every core ``X_k^T Z Y_l``.

    Returns ``(components, assembled)`` where ``components`` maps ``(k, l)`` to
    the thresholded core and ``assembled`` is the ``m x n`` result.  Components
    with infinite weight are omitted (they are identically zero).
    """
    Z = _as_finite_matrix(Z, "Z")
    if Z.shape != tuple(family.shape):
        raise ValueError(f"matrix shape {Z.shape} does not match family {family.shape}")
    lambdas = check_lambdas(family, lambdas)
    comps, _ = _gsvt(family, Z, lambdas)
    return comps, assemble(family, comps)


def generalized_svt_projected(Z, family: BasisFamily, lambdas):
    """Same operator computed in ambient coordinates: ``sum S_lam(P_k Z Q_l)``.

    Uses only the block projectors, never a basis; kept as an independent
    route for checking :func:`generalized_svt`.
    """
    Z = _as_finite_matrix(Z, "Z")
    lambdas = check_lambdas(family, lambdas)
    out = np.zeros_like(Z)
    for k, l in family.nonempty_keys():
        lam = lambdas[(k, l)]
        if math.isinf(lam):
            continue
        H = family.col_block(l).project(family.row_block(k).project(Z).T).T
        out += svt(H, lam)
    return out


def decompose(R, family: BasisFamily):
    """Unique cores ``R_kl = X_k^T R Y_l`` with ``R = sum X_k R_kl Y_l^T``."""
    R = _as_finite_matrix(R, "R")
    if R.shape != tuple(family.shape):
        raise ValueError(f"matrix shape {R.shape} does not match family {family.shape}")
    return _cores(family, R, family.keys())
