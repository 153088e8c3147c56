"""Orthogonal auxiliary basis families.

A family holds, for each side of the matrix, an ordered list of blocks whose
column spans are mutually orthogonal and together span the whole side.  Blocks
built from bias/community structure are *implicit*: projections onto them are
computed with group means, so nothing of size ``m x m`` is ever stored unless a
dense basis is explicitly requested through :meth:`Block.basis`.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse

__all__ = [
    "CommunityAssignment",
    "Block",
    "IdentityBlock",
    "ExplicitBlock",
    "MeanBlock",
    "CommunityBlock",
    "ResidualBlock",
    "BasisFamily",
    "ValidationReport",
    "build_identity",
    "build_bomic",
    "build_omicplus",
    "build_bomicplus",
    "build_explicit",
    "build_family",
    "project",
    "validate",
    "orthonormal_completion",
    "FAMILY_KINDS",
]

FAMILY_KINDS = ("softimpute", "bomic", "omicplus", "bomicplus")


@dataclass(frozen=True, eq=False)
class CommunityAssignment:
    """Maps each index in ``[0, size)`` to exactly one community."""

    community_of: np.ndarray
    labels: tuple | None = None

    def __post_init__(self):
        c = np.asarray(self.community_of)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("community_of must be a nonempty 1-d array")
        if not np.issubdtype(c.dtype, np.integer):
            if not np.all(np.equal(np.mod(c, 1), 0)):
                raise ValueError("community ids must be integers")
        c = c.astype(np.int64)
        if c.min() < 0:
            raise ValueError("community ids must be nonnegative")
        counts = np.bincount(c)
        if np.any(counts == 0):
            empty = np.flatnonzero(counts == 0).tolist()
            raise ValueError(f"empty communities: {empty}")
        if self.labels is not None and len(self.labels) != counts.size:
            raise ValueError("one label per community is required")
        c.setflags(write=False)
        object.__setattr__(self, "community_of", c)

    @classmethod
    def single(cls, size):
        return cls(np.zeros(size, dtype=np.int64))

    @classmethod
    def equal_blocks(cls, size, num):
        if num < 1 or size % num:
            raise ValueError(f"{size} indices cannot be split into {num} equal communities")
        return cls(np.arange(size) // (size // num))

    @property
    def size(self):
        return int(self.community_of.size)

    @property
    def num_communities(self):
        return int(self.community_of.max()) + 1

    @cached_property
    def sizes(self):
        return np.bincount(self.community_of)

    def digest(self):
        return hashlib.sha256(self.community_of.astype("<i8").tobytes()).hexdigest()

    @cached_property
    def membership(self):
        """Sparse ``a x size`` 0/1 matrix; row ``c`` marks the members of ``c``."""
        return sparse.csr_matrix(
            (np.ones(self.size), (self.community_of, np.arange(self.size))),
            shape=(self.num_communities, self.size),
        )

    def group_sums(self, W):
        return self.membership @ W

    def group_means(self, W):
        """Per-community column means of ``W`` broadcast back to every member."""
        sums = self.group_sums(W)
        means = sums / self.sizes.reshape((-1,) + (1,) * (W.ndim - 1))
        return means[self.community_of]

    def indicators(self):
        """Dense ``size x a`` matrix of normalized community indicators."""
        X = np.zeros((self.size, self.num_communities))
        X[np.arange(self.size), self.community_of] = 1.0
        return X / np.sqrt(self.sizes)


def orthonormal_completion(Q, size):
    """Columns completing the orthonormal ``Q`` to a basis of ``R^size``.

    Deterministic: uses the Householder reflectors of ``Q`` (no pivoting), and
    fixes signs so the largest-magnitude entry of each new column is positive.
    """
    Q = np.asarray(Q, dtype=float).reshape(size, -1)
    p = Q.shape[1]
    if p == 0:
        return np.eye(size)
    full, _ = np.linalg.qr(Q, mode="complete")
    C = full[:, p:]
    if C.shape[1]:
        # re-orthogonalize against Q once; Householder output is already close
        C = C - Q @ (Q.T @ C)
        C, _ = np.linalg.qr(C)
        idx = np.argmax(np.abs(C), axis=0)
        C = C * np.sign(C[idx, np.arange(C.shape[1])])
    return C


class Block:
    """One orthonormal block ``X^(k)`` of a basis family (abstract)."""

    kind = "abstract"
    #: cheap coordinate access (``coords``/``expand`` cost O(size * width))
    compact = False

    def __init__(self, size, width):
        self.size = int(size)
        self.width = int(width)
        self._basis = None

    def project(self, W):
        """``X X^T W`` for ``W`` with ``size`` rows."""
        raise NotImplementedError

    def _dense_basis(self):
        raise NotImplementedError

    def basis(self):
        """Dense ``size x width`` orthonormal basis (cached)."""
        if self._basis is None:
            B = self._dense_basis()
            B.setflags(write=False)
            self._basis = B
        return self._basis

    def coords(self, W):
        """``X^T W``."""
        return self.basis().T @ W

    def expand(self, C):
        """``X C``."""
        return self.basis() @ C

    def _check(self, W):
        W = np.asarray(W, dtype=float)
        if W.shape[0] != self.size:
            raise ValueError(f"operand has {W.shape[0]} rows, block acts on {self.size}")
        return W

    def __repr__(self):
        return f"{type(self).__name__}(size={self.size}, width={self.width})"


class IdentityBlock(Block):
    kind = "identity"
    compact = True

    def __init__(self, size):
        super().__init__(size, size)

    def project(self, W):
        return self._check(W).copy()

    def _dense_basis(self):
        return np.eye(self.size)

    def coords(self, W):
        return self._check(W).copy()

    def expand(self, C):
        return np.array(C, dtype=float)


class ExplicitBlock(Block):
    """Block given by a user-supplied matrix (assumed orthonormal; see :func:`validate`)."""

    kind = "explicit"
    compact = True

    def __init__(self, matrix):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim == 1:
            matrix = matrix[:, None]
        super().__init__(matrix.shape[0], matrix.shape[1])
        matrix = matrix.copy()
        matrix.setflags(write=False)
        self._basis = matrix

    def project(self, W):
        W = self._check(W)
        return self._basis @ (self._basis.T @ W)


class MeanBlock(Block):
    """The constant direction ``(1/sqrt(size), ..., 1/sqrt(size))``."""

    kind = "mean"
    compact = True

    def __init__(self, size):
        super().__init__(size, 1)

    def project(self, W):
        W = self._check(W)
        return np.broadcast_to(W.mean(axis=0), W.shape).copy()

    def _dense_basis(self):
        return np.full((self.size, 1), 1.0 / np.sqrt(self.size))

    def coords(self, W):
        W = self._check(W)
        return W.sum(axis=0, keepdims=True) / np.sqrt(self.size)

    def expand(self, C):
        C = np.asarray(C, dtype=float)
        return np.broadcast_to(C / np.sqrt(self.size), (self.size,) + C.shape[1:]).copy()


class CommunityBlock(Block):
    """Span of normalized community indicators, optionally minus the constant direction.

    With ``centered=False`` this is the first block of OMIC+ (width ``a``);
    with ``centered=True`` it is the second block of BOMIC+ (width ``a - 1``),
    represented as ``norm(X) @ Q`` where ``Q`` is an orthonormal complement of
    ``(sqrt(|c| / size))_c`` in ``R^a``.
    """

    kind = "community"
    compact = True

    def __init__(self, assignment: CommunityAssignment, centered=False):
        a = assignment.num_communities
        super().__init__(assignment.size, a - 1 if centered else a)
        self.assignment = assignment
        self.centered = centered
        self._sqrt_sizes = np.sqrt(assignment.sizes.astype(float))
        if centered:
            w = self._sqrt_sizes / np.sqrt(assignment.size)
            self._Q = orthonormal_completion(w[:, None], a)
        else:
            self._Q = None

    def project(self, W):
        W = self._check(W)
        out = self.assignment.group_means(W)
        if self.centered:
            out = out - W.mean(axis=0)
        return out

    def _community_coords(self, W):
        sums = self.assignment.group_sums(W)
        return sums / self._sqrt_sizes.reshape((-1,) + (1,) * (W.ndim - 1))

    def coords(self, W):
        C = self._community_coords(self._check(W))
        return self._Q.T @ C if self.centered else C

    def expand(self, C):
        C = np.asarray(C, dtype=float)
        if self.centered:
            C = self._Q @ C
        scaled = C / self._sqrt_sizes.reshape((-1,) + (1,) * (C.ndim - 1))
        return scaled[self.assignment.community_of]

    def _dense_basis(self):
        X = self.assignment.indicators()
        return X @ self._Q if self.centered else X


class ResidualBlock(Block):
    """Orthogonal complement of the community span (or of the constant direction).

    ``project`` subtracts per-community means; a dense basis is only built on
    request, by orthonormal completion of the preceding blocks.
    """

    kind = "residual"

    def __init__(self, assignment: CommunityAssignment | None, size=None):
        if assignment is None:
            if size is None:
                raise ValueError("size is required without an assignment")
            a = 1
        else:
            size = assignment.size
            a = assignment.num_communities
        super().__init__(size, size - a)
        self.assignment = assignment

    def project(self, W):
        W = self._check(W)
        if self.assignment is None:
            return W - W.mean(axis=0)
        return W - self.assignment.group_means(W)

    def _dense_basis(self):
        if self.assignment is None:
            seed = np.full((self.size, 1), 1.0 / np.sqrt(self.size))
        else:
            seed = self.assignment.indicators()
        return orthonormal_completion(seed, self.size)


@dataclass(frozen=True, eq=False)
class BasisFamily:
    """Row blocks ``X^(1..K)`` and column blocks ``Y^(1..L)``.

    Component keys are 1-based ``(k, l)`` tuples, matching the usual
    ``M^(k,l)`` labelling.
    """

    kind: str
    shape: tuple[int, int]
    row_blocks: tuple
    col_blocks: tuple
    user_communities: CommunityAssignment | None = None
    item_communities: CommunityAssignment | None = None

    @property
    def K(self):
        return len(self.row_blocks)

    @property
    def L(self):
        return len(self.col_blocks)

    def keys(self):
        return [(k, l) for k in range(1, self.K + 1) for l in range(1, self.L + 1)]

    def row_block(self, k):
        return self.row_blocks[k - 1]

    def col_block(self, l):
        return self.col_blocks[l - 1]

    def widths(self):
        return [b.width for b in self.row_blocks], [b.width for b in self.col_blocks]

    def nonempty_keys(self):
        return [
            (k, l)
            for (k, l) in self.keys()
            if self.row_block(k).width > 0 and self.col_block(l).width > 0
        ]

    def descriptor(self):
        """JSON-serializable description used for persistence."""
        out = {"kind": self.kind, "shape": list(self.shape)}
        for name, assign in (
            ("user_communities", self.user_communities),
            ("item_communities", self.item_communities),
        ):
            if assign is not None:
                out[name] = {
                    "num_communities": assign.num_communities,
                    "sha256": assign.digest(),
                }
        return out


def _check_dims(m, n, minimum=1):
    m, n = int(m), int(n)
    if m < minimum or n < minimum:
        raise ValueError(f"dimensions must be >= {minimum}, got {(m, n)}")
    return m, n


def build_identity(m, n):
    """Single block per side: the plain SoftImpute setting."""
    m, n = _check_dims(m, n)
    return BasisFamily("softimpute", (m, n), (IdentityBlock(m),), (IdentityBlock(n),))


def build_bomic(m, n):
    """Global-mean direction plus its complement on each side."""
    m, n = _check_dims(m, n, minimum=2)
    return BasisFamily(
        "bomic",
        (m, n),
        (MeanBlock(m), ResidualBlock(None, size=m)),
        (MeanBlock(n), ResidualBlock(None, size=n)),
    )


def _check_assignments(users, items):
    if not isinstance(users, CommunityAssignment) or not isinstance(items, CommunityAssignment):
        raise TypeError("community assignments must be CommunityAssignment instances")
    return users.size, items.size


def build_omicplus(users: CommunityAssignment, items: CommunityAssignment):
    """Normalized community indicators plus their complement on each side."""
    m, n = _check_assignments(users, items)
    return BasisFamily(
        "omicplus",
        (m, n),
        (CommunityBlock(users), ResidualBlock(users)),
        (CommunityBlock(items), ResidualBlock(items)),
        users,
        items,
    )


def build_bomicplus(users: CommunityAssignment, items: CommunityAssignment):
    """Global mean, community span minus the mean, and the residual on each side.

    A side with a single community gets an empty (width 0) middle block.
    """
    m, n = _check_assignments(users, items)
    return BasisFamily(
        "bomicplus",
        (m, n),
        (MeanBlock(m), CommunityBlock(users, centered=True), ResidualBlock(users)),
        (MeanBlock(n), CommunityBlock(items, centered=True), ResidualBlock(items)),
        users,
        items,
    )


def build_explicit(row_mats, col_mats):
    """Family from explicit matrices; orthonormality is *not* checked here."""
    rows = tuple(ExplicitBlock(X) for X in row_mats)
    cols = tuple(ExplicitBlock(Y) for Y in col_mats)
    if not rows or not cols:
        raise ValueError("at least one block per side is required")
    if len({b.size for b in rows}) != 1 or len({b.size for b in cols}) != 1:
        raise ValueError("all blocks on one side must have the same number of rows")
    return BasisFamily("explicit", (rows[0].size, cols[0].size), rows, cols)


def build_family(kind, m=None, n=None, users=None, items=None):
    """Dispatch on a family kind name."""
    if kind in ("softimpute", "identity"):
        return build_identity(m, n)
    if kind == "bomic":
        return build_bomic(m, n)
    if kind in ("omicplus", "bomicplus"):
        if users is None or items is None:
            raise ValueError(f"family '{kind}' requires user and item communities")
        builder = build_omicplus if kind == "omicplus" else build_bomicplus
        return builder(users, items)
    raise ValueError(f"unknown family kind {kind!r}; expected one of {FAMILY_KINDS}")


def project(block: Block, W):
    """Project the columns of ``W`` onto the span of ``block``."""
    return block.project(W)


@dataclass
class ValidationReport:
    orthonormality: float
    cross_block: float
    widths_ok: bool
    tol: float = 1e-8

    @property
    def passed(self):
        return self.widths_ok and self.orthonormality <= self.tol and self.cross_block <= self.tol

    def __bool__(self):
        return self.passed


_DENSE_VALIDATION_LIMIT = 2000


def _side_violations(blocks, size, rng):
    total = sum(b.width for b in blocks)
    if size <= _DENSE_VALIDATION_LIMIT:
        bases = [b.basis() for b in blocks if b.width > 0]
        ortho = max(
            (np.abs(B.T @ B - np.eye(B.shape[1])).max() for B in bases), default=0.0
        )
        cross = 0.0
        for i in range(len(bases)):
            for j in range(i + 1, len(bases)):
                cross = max(cross, float(np.abs(bases[i].T @ bases[j]).max()))
        return float(ortho), cross, total == size
    # large implicit blocks: projector identities on random probes
    W = rng.standard_normal((size, 4))
    projs = [b.project(W) for b in blocks]
    scale = np.linalg.norm(W)
    ortho = max(
        (np.linalg.norm(b.project(P) - P) / scale for b, P in zip(blocks, projs)), default=0.0
    )
    cross = 0.0
    for i, b in enumerate(blocks):
        for j, P in enumerate(projs):
            if i != j:
                cross = max(cross, float(np.linalg.norm(b.project(P)) / scale))
    resolution = float(np.linalg.norm(sum(projs) - W) / scale)
    return float(max(ortho, resolution)), cross, total == size


def validate(family: BasisFamily, tol=1e-8, seed=0):
    """Check the orthogonality and spanning conditions of a family.

    Never raises on a bad family; the returned report carries the violations.
    """
    rng = np.random.default_rng(seed)
    m, n = family.shape
    o1, c1, w1 = _side_violations(family.row_blocks, m, rng)
    o2, c2, w2 = _side_violations(family.col_blocks, n, rng)
    return ValidationReport(max(o1, o2), max(c1, c2), w1 and w2, tol)
