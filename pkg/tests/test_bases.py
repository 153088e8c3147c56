import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_assignment
from omic.bases import (
    CommunityAssignment,
    build_bomic,
    build_bomicplus,
    build_explicit,
    build_family,
    build_identity,
    build_omicplus,
    orthonormal_completion,
    project,
    validate,
)


def _all_blocks(family):
    m, n = family.shape
    return [(b, m) for b in family.row_blocks] + [(b, n) for b in family.col_blocks]


def test_bomic_mean_direction():
    fam = build_bomic(3, 4)
    np.testing.assert_allclose(fam.row_block(1).basis()[:, 0], np.full(3, 1 / np.sqrt(3)))
    np.testing.assert_allclose(project(fam.row_block(2), np.ones(3)), 0, atol=1e-15)
    np.testing.assert_allclose(project(fam.row_block(1), np.array([1.0, 2, 3])), [2, 2, 2])
    assert fam.widths() == ([1, 2], [1, 3])


def test_bomic_rejects_small_dims():
    with pytest.raises(ValueError):
        build_bomic(1, 5)


def test_omicplus_indicators():
    users = CommunityAssignment(np.array([0, 0, 1, 1]))
    fam = build_omicplus(users, CommunityAssignment.single(3))
    X1 = fam.row_block(1).basis()
    np.testing.assert_allclose(X1, np.array([[1, 0], [1, 0], [0, 1], [0, 1]]) / np.sqrt(2))
    v = np.array([5.0, 5.0, -1.0, -1.0])
    np.testing.assert_allclose(fam.row_block(2).project(v), 0, atol=1e-14)


def test_omicplus_single_community_matches_bomic(rng):
    fam = build_omicplus(CommunityAssignment.single(5), CommunityAssignment.single(4))
    ref = build_bomic(5, 4)
    W = rng.standard_normal((5, 3))
    for k in (1, 2):
        np.testing.assert_allclose(fam.row_block(k).project(W), ref.row_block(k).project(W), atol=1e-14)


def test_empty_community_rejected():
    with pytest.raises(ValueError):
        CommunityAssignment(np.array([0, 2, 2]))


def test_bomicplus_middle_block():
    comm = CommunityAssignment(np.array([0, 0, 1, 1]))
    fam = build_bomicplus(comm, comm)
    P2 = fam.row_block(2)
    np.testing.assert_allclose(P2.project(np.array([1.0, 1, -1, -1])), [1, 1, -1, -1], atol=1e-14)
    np.testing.assert_allclose(P2.project(np.array([1.0, -1, 0, 0])), 0, atol=1e-14)
    # oracle: orthonormalize [1, indicators] explicitly
    Q, _ = np.linalg.qr(np.column_stack([np.ones(4), comm.indicators()[:, 0]]))
    oracle = Q[:, 1:] @ Q[:, 1:].T
    W = np.random.default_rng(0).standard_normal((4, 3))
    np.testing.assert_allclose(P2.project(W), oracle @ W, atol=1e-12)


def test_bomicplus_single_community_has_empty_block():
    fam = build_bomicplus(CommunityAssignment.single(6), CommunityAssignment(np.arange(5) % 2))
    assert fam.widths() == ([1, 0, 5], [1, 1, 3])
    assert all(fam.row_block(2).width > 0 for k, _ in fam.nonempty_keys() if k == 2)
    assert validate(fam).passed


def test_widths_sum_to_dimension(rng):
    users = random_assignment(rng, 13)
    items = random_assignment(rng, 9)
    fam = build_bomicplus(users, items)
    rw, cw = fam.widths()
    assert rw == [1, users.num_communities - 1, 13 - users.num_communities]
    assert sum(rw) == 13 and sum(cw) == 9


def test_residual_block_equals_minus_community_means(rng):
    users = random_assignment(rng, 20)
    fam = build_bomicplus(users, CommunityAssignment.single(3))
    W = rng.standard_normal((20, 4))
    expected = W - users.group_means(W)
    np.testing.assert_allclose(fam.row_block(3).project(W), expected, atol=1e-12)
    const = users.group_means(rng.standard_normal((20, 1)))
    np.testing.assert_allclose(fam.row_block(3).project(const), 0, atol=1e-12)


def test_projection_matches_explicit_basis(rng):
    users = random_assignment(rng, 12)
    fam = build_bomicplus(users, users)
    W = rng.standard_normal((12, 5))
    # independent oracle: QR of [1, indicators] gives the nested spans
    A = np.column_stack([np.ones(12), users.indicators()])
    Q, _ = np.linalg.qr(A)
    a = users.num_communities
    full, _ = np.linalg.qr(np.column_stack([Q[:, :a], rng.standard_normal((12, 12))]))
    spans = [full[:, :1], full[:, 1:a], full[:, a:]]
    for k, S in enumerate(spans, start=1):
        np.testing.assert_allclose(fam.row_block(k).project(W), S @ (S.T @ W), atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(m=st.integers(2, 50), n=st.integers(2, 50), seed=st.integers(0, 10**6), kind=st.sampled_from(
    ["softimpute", "bomic", "omicplus", "bomicplus"]))
def test_projector_algebra(m, n, seed, kind):
    rng = np.random.default_rng(seed)
    fam = build_family(kind, m, n, random_assignment(rng, m), random_assignment(rng, n))
    assert validate(fam).passed
    for blocks, size in ((fam.row_blocks, m), (fam.col_blocks, n)):
        W = rng.standard_normal((size, 3))
        projs = [b.project(W) for b in blocks]
        np.testing.assert_allclose(sum(projs), W, atol=1e-10)
        for i, b in enumerate(blocks):
            np.testing.assert_allclose(b.project(projs[i]), projs[i], atol=1e-10)
            for j, P in enumerate(projs):
                if i != j:
                    np.testing.assert_allclose(b.project(P), 0, atol=1e-10)


def test_coords_expand_roundtrip(rng):
    users = random_assignment(rng, 15)
    fam = build_bomicplus(users, users)
    for b in fam.row_blocks:
        C = rng.standard_normal((b.width, 2))
        np.testing.assert_allclose(b.coords(b.expand(C)), C, atol=1e-12)
        W = rng.standard_normal((15, 2))
        np.testing.assert_allclose(b.coords(W), b.basis().T @ W, atol=1e-12)


def test_validate_detects_duplicates():
    assert validate(build_bomic(5, 7)).passed
    e = np.eye(4)
    bad = build_explicit([e[:, :1], e[:, :1], e[:, 2:]], [np.eye(3)])
    report = validate(bad)
    assert not report.passed
    assert report.cross_block == pytest.approx(1.0)


def test_validate_large_implicit_family(rng):
    comm = CommunityAssignment(np.arange(3000) % 7)
    assert validate(build_bomicplus(comm, comm)).passed


def test_orthonormal_completion_deterministic(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((8, 3)))
    C1 = orthonormal_completion(Q, 8)
    C2 = orthonormal_completion(Q.copy(), 8)
    np.testing.assert_array_equal(C1, C2)
    full = np.column_stack([Q, C1])
    np.testing.assert_allclose(full.T @ full, np.eye(8), atol=1e-12)


def test_build_family_dispatch():
    assert build_family("softimpute", 3, 4).kind == "softimpute"
    assert build_identity(3, 4).widths() == ([3], [4])
    with pytest.raises(ValueError):
        build_family("bomicplus", 3, 4)
    with pytest.raises(ValueError):
        build_family("nope", 3, 4)


def test_equal_blocks_and_digest():
    a = CommunityAssignment.equal_blocks(6, 3)
    np.testing.assert_array_equal(a.community_of, [0, 0, 1, 1, 2, 2])
    assert a.digest() == CommunityAssignment(np.array([0, 0, 1, 1, 2, 2])).digest()
    with pytest.raises(ValueError):
        CommunityAssignment.equal_blocks(7, 3)
