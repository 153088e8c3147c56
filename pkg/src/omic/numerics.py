"""Linear-algebra primitives shared by the dense and scalable solvers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

__all__ = [
    "SparseObservations",
    "LowRankFactor",
    "SparsePlusLowRank",
    "truncated_svd",
    "fix_signs",
    "nuclear_norm",
    "frobenius_norm",
    "splr_mul_right",
    "splr_mul_left",
    "factor_diff_norm",
]


def _as_finite_matrix(A, name="A"):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite values")
    return A


@dataclass(frozen=True, eq=False)
class SparseObservations:
    """Multiset of observed entries ``(rows[t], cols[t]) -> values[t]``.

    Duplicate coordinates are kept; every loss term counts an entry once per
    occurrence.  ``row_labels``/``col_labels`` optionally carry the original
    identifiers when the data was loaded from a file.
    """

    shape: tuple[int, int]
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    row_labels: tuple | None = None
    col_labels: tuple | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        m, n = (int(s) for s in self.shape)
        rows = np.asarray(self.rows, dtype=np.int64).ravel()
        cols = np.asarray(self.cols, dtype=np.int64).ravel()
        values = np.asarray(self.values, dtype=float).ravel()
        if not (rows.size == cols.size == values.size):
            raise ValueError("rows, cols and values must have the same length")
        if m < 1 or n < 1:
            raise ValueError(f"invalid shape {(m, n)}")
        if rows.size:
            if rows.min() < 0 or rows.max() >= m:
                raise ValueError(f"row index out of range [0, {m})")
            if cols.min() < 0 or cols.max() >= n:
                raise ValueError(f"column index out of range [0, {n})")
        if not np.all(np.isfinite(values)):
            raise ValueError("observed values must be finite")
        for arr in (rows, cols, values):
            arr.setflags(write=False)
        object.__setattr__(self, "shape", (m, n))
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_dense(cls, R, mask):
        R = np.asarray(R, dtype=float)
        rows, cols = np.nonzero(np.asarray(mask, dtype=bool))
        return cls(R.shape, rows, cols, R[rows, cols])

    @property
    def nnz(self):
        return int(self.values.size)

    def subset(self, index):
        """Observations at positions ``index`` (keeps labels)."""
        index = np.asarray(index)
        return SparseObservations(
            self.shape,
            self.rows[index],
            self.cols[index],
            self.values[index],
            self.row_labels,
            self.col_labels,
        )

    def with_values(self, values):
        return SparseObservations(
            self.shape, self.rows, self.cols, values, self.row_labels, self.col_labels
        )

    def aggregate(self):
        """Collapse duplicates.

        Returns ``(rows, cols, sums, counts)`` over the distinct observed
        coordinates, sorted row-major.
        """
        if "aggregate" not in self._cache:
            m, n = self.shape
            flat = self.rows * n + self.cols
            uniq, inverse, counts = np.unique(flat, return_inverse=True, return_counts=True)
            sums = np.bincount(inverse, weights=self.values, minlength=uniq.size)
            self._cache["aggregate"] = (uniq // n, uniq % n, sums, counts)
        return self._cache["aggregate"]

    @property
    def max_multiplicity(self):
        if self.nnz == 0:
            return 1
        return int(self.aggregate()[3].max())

    def to_csr(self):
        """Sparse matrix of the observations, duplicates summed."""
        rows, cols, sums, _ = self.aggregate()
        return sparse.csr_matrix((sums, (rows, cols)), shape=self.shape)

    def mask(self):
        M = np.zeros(self.shape, dtype=bool)
        M[self.rows, self.cols] = True
        return M


@dataclass(frozen=True, eq=False)
class LowRankFactor:
    """``U @ diag(d) @ V.T`` with orthonormal ``U``, ``V`` and ``d >= 0``.

    Factors produced by an SVD keep ``d`` nonincreasing; concatenations of
    per-component factors do not.
    """

    U: np.ndarray
    d: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        U = np.asarray(self.U, dtype=float)
        d = np.asarray(self.d, dtype=float).ravel()
        V = np.asarray(self.V, dtype=float)
        if U.ndim != 2 or V.ndim != 2:
            raise ValueError("U and V must be 2-dimensional")
        if U.shape[1] != d.size or V.shape[1] != d.size:
            raise ValueError(
                f"inconsistent factor ranks: U {U.shape}, d {d.shape}, V {V.shape}"
            )
        if np.any(d < 0):
            raise ValueError("singular values must be nonnegative")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "V", V)

    @classmethod
    def zeros(cls, m, n):
        return cls(np.zeros((m, 0)), np.zeros(0), np.zeros((n, 0)))

    @property
    def shape(self):
        return (self.U.shape[0], self.V.shape[0])

    @property
    def rank(self):
        return int(self.d.size)

    def to_dense(self):
        return (self.U * self.d) @ self.V.T

    def entries(self, rows, cols):
        """Values at the coordinate pairs, without densifying."""
        if self.rank == 0:
            return np.zeros(np.shape(rows), dtype=float)
        return np.einsum("ij,ij->i", self.U[rows] * self.d, self.V[cols])

    def nuclear_norm(self):
        return float(self.d.sum())

    def orthonormality_error(self):
        """``max |U^T U - I|`` and ``max |V^T V - I|`` (not checked on construction)."""
        eye = np.eye(self.rank)
        return max(
            float(np.abs(self.U.T @ self.U - eye).max(initial=0.0)),
            float(np.abs(self.V.T @ self.V - eye).max(initial=0.0)),
        )

    def frobenius_norm(self):
        return float(np.sqrt(np.sum(self.d**2)))

    def matmul(self, W):
        return self.U @ (self.d[:, None] * (self.V.T @ W))

    def rmatmul(self, W):
        """``(U D V^T)^T @ W``."""
        return self.V @ (self.d[:, None] * (self.U.T @ W))

    @staticmethod
    def concat(factors, m, n):
        factors = [f for f in factors if f.rank > 0]
        if not factors:
            return LowRankFactor.zeros(m, n)
        # blocks live in mutually orthogonal subspaces; d is not globally sorted
        return LowRankFactor(
            np.hstack([f.U for f in factors]),
            np.concatenate([f.d for f in factors]),
            np.hstack([f.V for f in factors]),
        )


@dataclass(frozen=True, eq=False)
class SparsePlusLowRank:
    """The operator ``Z = Z_sparse + U diag(d) V^T``, never densified."""

    sparse: sparse.csr_matrix
    lowrank: LowRankFactor

    def __post_init__(self):
        S = sparse.csr_matrix(self.sparse)
        if S.shape != self.lowrank.shape:
            raise ValueError(
                f"sparse part {S.shape} and low-rank part {self.lowrank.shape} disagree"
            )
        object.__setattr__(self, "sparse", S)
        object.__setattr__(self, "_sparse_t", S.T.tocsr())

    @property
    def shape(self):
        return self.sparse.shape

    def to_dense(self):
        return self.sparse.toarray() + self.lowrank.to_dense()


def fix_signs(U, Vt):
    """Flip singular pairs so the largest-magnitude entry of each column of U is positive."""
    if U.shape[1] == 0:
        return U, Vt
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, Vt * signs[:, None]


def truncated_svd(A, r):
    """Top-``r`` singular triplets of a dense matrix as a :class:`LowRankFactor`."""
    A = _as_finite_matrix(A)
    if r < 0 or r > min(A.shape):
        raise ValueError(f"rank {r} outside [0, {min(A.shape)}]")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    U, Vt = fix_signs(U[:, :r], Vt[:r])
    return LowRankFactor(U, s[:r], Vt.T)


def nuclear_norm(A):
    A = _as_finite_matrix(A)
    if A.size == 0:
        return 0.0
    return float(np.linalg.svd(A, compute_uv=False).sum())


def frobenius_norm(A):
    return float(np.linalg.norm(_as_finite_matrix(A)))


def _check_operand(Z, W, side):
    W = np.asarray(W, dtype=float)
    vector = W.ndim == 1
    if vector:
        W = W[:, None]
    need = Z.shape[1] if side == "right" else Z.shape[0]
    if W.shape[0] != need:
        raise ValueError(f"operand has {W.shape[0]} rows, expected {need}")
    return W, vector


def splr_mul_right(Z: SparsePlusLowRank, W):
    """``Z @ W`` in ``O(nnz r + (m + n) r^2)``."""
    W, vector = _check_operand(Z, W, "right")
    out = Z.sparse @ W
    if Z.lowrank.rank:
        out += Z.lowrank.matmul(W)
    return out[:, 0] if vector else out


def splr_mul_left(Z: SparsePlusLowRank, W):
    """``Z.T @ W``, i.e. the transpose of ``W.T @ Z``."""
    W, vector = _check_operand(Z, W, "left")
    out = Z._sparse_t @ W
    if Z.lowrank.rank:
        out += Z.lowrank.rmatmul(W)
    return out[:, 0] if vector else out


def factor_diff_norm(old: LowRankFactor, new: LowRankFactor):
    """``||old - new||_F`` without forming either matrix.

    Works on the triangular factors of the stacked bases, so the cost is
    ``O((m + n) r^2)`` and there is no cancellation when the two are close.
    """
    if old.rank == 0:
        return new.frobenius_norm()
    if new.rank == 0:
        return old.frobenius_norm()
    Ru = np.linalg.qr(np.hstack([old.U, new.U]), mode="r")
    Rv = np.linalg.qr(np.hstack([old.V, new.V]), mode="r")
    core = (Ru * np.concatenate([old.d, -new.d])) @ Rv.T
    return float(np.linalg.norm(core))
