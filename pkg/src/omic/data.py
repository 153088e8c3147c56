"""Rating and community files, train/validation/test splits, synthetic generators."""

from __future__ import annotations

import gzip
import io
from dataclasses import dataclass

import numpy as np

from .bases import CommunityAssignment
from .numerics import SparseObservations

__all__ = [
    "Dataset",
    "SyntheticInstance",
    "load_triplets",
    "load_communities",
    "load_dataset",
    "split",
    "gen_synthetic",
    "gen_bound_matrix",
    "sample_ordering",
]

_DELIMITERS = ("::", "\t", ",")


@dataclass(frozen=True)
class Dataset:
    observations: SparseObservations
    users: CommunityAssignment | None = None
    items: CommunityAssignment | None = None

    def __post_init__(self):
        m, n = self.observations.shape
        if self.users is not None and self.users.size != m:
            raise ValueError(f"user communities cover {self.users.size} rows, matrix has {m}")
        if self.items is not None and self.items.size != n:
            raise ValueError(f"item communities cover {self.items.size} columns, matrix has {n}")

    @property
    def shape(self):
        return self.observations.shape


def _open_text(path):
    path = str(path)
    if path.endswith(".gz"):
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
    return open(path, encoding="utf-8")


def _detect_delimiter(line, lineno):
    for delim in _DELIMITERS:
        if delim in line:
            return delim
    raise ValueError(f"line {lineno}: no delimiter found (expected tab, comma or '::')")


def _token(text):
    """Ids that look like integers compare as integers."""
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        return text


def _ordered(tokens):
    uniq = set(tokens)
    if all(isinstance(t, int) for t in uniq):
        return sorted(uniq)
    return sorted(uniq, key=str)


def _index(tokens):
    labels = _ordered(tokens)
    lookup = {t: i for i, t in enumerate(labels)}
    return np.fromiter((lookup[t] for t in tokens), dtype=np.int64, count=len(tokens)), labels


def load_triplets(path, delimiter=None):
    """Read ``user item rating`` records (extra trailing fields are ignored).

    The delimiter is detected from the first record unless given.  A first
    line whose rating field is not numeric is treated as a header.  Ids are
    remapped to dense 0-based indices in sorted order; the original ids are
    kept as ``row_labels``/``col_labels``.  Repeated ``(user, item)`` pairs
    are all retained.
    """
    users, items, values = [], [], []
    with _open_text(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if delimiter is None:
                delimiter = _detect_delimiter(line, lineno)
            fields = line.split(delimiter)
            if len(fields) < 3:
                raise ValueError(f"line {lineno}: expected at least 3 fields, got {len(fields)}")
            try:
                value = float(fields[2])
            except ValueError:
                if not values and lineno == 1:
                    continue
                raise ValueError(f"line {lineno}: rating {fields[2]!r} is not a number") from None
            if not np.isfinite(value):
                raise ValueError(f"line {lineno}: rating must be finite")
            if not fields[0].strip() or not fields[1].strip():
                raise ValueError(f"line {lineno}: empty id")
            users.append(_token(fields[0]))
            items.append(_token(fields[1]))
            values.append(value)
    if not values:
        raise ValueError(f"{path}: no ratings found")
    rows, row_labels = _index(users)
    cols, col_labels = _index(items)
    return SparseObservations(
        (len(row_labels), len(col_labels)),
        rows,
        cols,
        np.asarray(values),
        tuple(row_labels),
        tuple(col_labels),
    )


def load_communities(path, ids=None, delimiter=None):
    """Read ``id label`` pairs into a :class:`CommunityAssignment`.

    With ``ids`` (e.g. the row labels of a loaded rating file) the result is
    aligned to that order and every id must be present.  Without it the ids
    must be integers forming a contiguous range starting at their minimum.
    Community labels are numbered in sorted order.
    """
    mapping = {}
    with _open_text(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            delim = delimiter or _detect_delimiter(line, lineno)
            fields = [f.strip() for f in line.split(delim)]
            if len(fields) < 2 or not fields[0] or not fields[1]:
                raise ValueError(f"line {lineno}: expected 'id{delim}label'")
            key, label = _token(fields[0]), _token(fields[1])
            if key in mapping and mapping[key] != label:
                raise ValueError(
                    f"line {lineno}: id {key!r} assigned to both {mapping[key]!r} and {label!r}"
                )
            mapping[key] = label
    if not mapping:
        raise ValueError(f"{path}: no community assignments found")
    if ids is None:
        keys = list(mapping)
        if not all(isinstance(k, int) for k in keys):
            raise ValueError("ids must be integers unless the expected ids are given")
        lo = min(keys)
        ids = list(range(lo, max(keys) + 1))
    missing = [i for i in ids if i not in mapping]
    if missing:
        raise ValueError(f"{len(missing)} ids have no community, e.g. {missing[:5]}")
    community, labels = _index([mapping[i] for i in ids])
    return CommunityAssignment(community, tuple(labels))


def load_dataset(path, user_communities=None, item_communities=None):
    obs = load_triplets(path)
    users = items = None
    if user_communities is not None:
        users = load_communities(user_communities, ids=obs.row_labels)
    if item_communities is not None:
        items = load_communities(item_communities, ids=obs.col_labels)
    return Dataset(obs, users, items)


def _largest_remainder(total, ratios):
    exact = np.asarray(ratios) * total
    counts = np.floor(exact).astype(np.int64)
    short = total - counts.sum()
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def split(obs: SparseObservations, ratios=(0.85, 0.10, 0.05), seed=0):
    """Seeded uniform partition of the entries into train/validation/test."""
    ratios = np.asarray(ratios, dtype=float)
    if ratios.shape != (3,) or np.any(ratios < 0) or not np.isclose(ratios.sum(), 1.0):
        raise ValueError(f"ratios must be three nonnegative numbers summing to 1, got {ratios}")
    counts = _largest_remainder(obs.nnz, ratios)
    perm = np.random.default_rng(seed).permutation(obs.nnz)
    bounds = np.cumsum(counts)[:-1]
    return tuple(obs.subset(np.sort(part)) for part in np.split(perm, bounds))


@dataclass(frozen=True, eq=False)
class SyntheticInstance:
    """Bias-versus-interaction test matrix with its sampled entries."""

    R: np.ndarray
    G: np.ndarray
    S: np.ndarray
    observations: SparseObservations
    alpha: float
    gamma: int
    p_obs: float
    c: float
    seed: int

    @property
    def shape(self):
        return self.R.shape

    def true_biases(self):
        """Global mean, row means and column means of ``R`` minus its global mean."""
        g = float(self.R.mean())
        D = self.R - g
        return g, D.mean(axis=1), D.mean(axis=0)

    def unobserved(self):
        """Entries not sampled, as observations of the true values."""
        mask = ~self.observations.mask()
        return SparseObservations.from_dense(self.R, mask)


def _centered_unit(size):
    v = np.arange(1, size + 1) - (size + 1) / 2
    return v / np.linalg.norm(v)


def gen_synthetic(alpha, gamma=4, p_obs=0.3, m=100, n=100, c=100.0, seed=0):
    """``R = alpha c G + (1 - alpha) c S`` sampled more densely in the top half.

    ``G`` holds pure user and item biases, ``S`` is the four-block sign
    pattern ``+-1/(mn)``.  ``round(gamma p m n / (gamma + 1))`` entries are
    drawn without replacement from the first ``m/2`` rows and
    ``round(p m n / (gamma + 1))`` from the rest.
    """
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    if int(gamma) != gamma or gamma < 1:
        raise ValueError("gamma must be an integer >= 1")
    if not 0 < p_obs <= 1:
        raise ValueError("p_obs must lie in (0, 1]")
    if m % 2 or n % 2 or m < 2 or n < 2:
        raise ValueError("m and n must be positive and even")
    gamma = int(gamma)
    a = _centered_unit(m)
    b = _centered_unit(n)
    v1 = np.full(m, 1 / np.sqrt(m))
    v2 = np.full(n, 1 / np.sqrt(n))
    G = 0.5 * np.outer(a, v2) + 0.5 * np.outer(v1, b)
    top = (np.arange(m) < m // 2)[:, None]
    left = (np.arange(n) < n // 2)[None, :]
    S = np.where(top == left, 1.0, -1.0) / (m * n)
    R = alpha * c * G + (1 - alpha) * c * S

    half = (m // 2) * n
    n_top = int(round(gamma * p_obs * m * n / (gamma + 1)))
    n_bottom = int(round(p_obs * m * n / (gamma + 1)))
    if n_top > half or n_bottom > half:
        raise ValueError(
            f"sampling budget ({n_top} top, {n_bottom} bottom) exceeds the {half} entries per half"
        )
    rng = np.random.default_rng(seed)
    flat = np.concatenate(
        [rng.choice(half, n_top, replace=False), half + rng.choice(half, n_bottom, replace=False)]
    )
    flat.sort()
    rows, cols = flat // n, flat % n
    obs = SparseObservations((m, n), rows, cols, R[rows, cols])
    return SyntheticInstance(R, G, S, obs, float(alpha), gamma, float(p_obs), float(c), seed)


def gen_bound_matrix(a, r, C, m, seed=0):
    """Community-structured square test matrix ``A + C B``.

    ``A`` has iid Rademacher values on an ``a x a`` grid of equal contiguous
    communities; ``B`` is a rank-``r`` Gaussian matrix inside the
    community-residual space on both sides, scaled to max-abs 1.  Returns
    ``(matrix, users, items)``.
    """
    a, r, m = int(a), int(r), int(m)
    if not 1 <= a <= m:
        raise ValueError("need 1 <= a <= m")
    if m % a:
        raise ValueError(f"m={m} is not divisible by a={a}; equal-size communities are required")
    if r < 1:
        raise ValueError("r must be >= 1")
    if C < 0:
        raise ValueError("C must be >= 0")
    rng = np.random.default_rng(seed)
    comm = CommunityAssignment.equal_blocks(m, a)
    signs = rng.choice([-1.0, 1.0], size=(a, a))
    A = signs[comm.community_of][:, comm.community_of]
    if a == m or C == 0:
        return A, comm, comm
    scale = 1 / np.sqrt(m - a)
    # a Gaussian in the residual span has the same law as the projection of a full Gaussian
    V = rng.normal(0, scale, (m, r))
    W = rng.normal(0, scale, (m, r))
    V -= comm.group_means(V)
    W -= comm.group_means(W)
    B = V @ W.T
    B /= np.abs(B).max()
    return A + C * B, comm, comm


def sample_ordering(m, n, mode="uniform", seed=0):
    """Random order of the eligible entries (flat indices ``i * n + j``).

    ``uniform``: every entry; ``checkerboard``: entries with ``i = j mod 2``.
    Prefixes of the result form nested observation sets.
    """
    rng = np.random.default_rng(seed)
    if mode == "uniform":
        return rng.permutation(m * n)
    if mode == "checkerboard":
        i, j = np.divmod(np.arange(m * n), n)
        return rng.permutation(np.flatnonzero(i % 2 == j % 2))
    raise ValueError(f"unknown sampling mode {mode!r}")
