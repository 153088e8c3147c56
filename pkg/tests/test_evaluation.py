import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omic.bases import build_bomic, build_omicplus
from omic.data import gen_bound_matrix, gen_synthetic, sample_ordering
from omic.evaluation import (
    bias_deviation,
    bound_value,
    calibrate_lambdas,
    compare_on_synthetic,
    empirical_sample_complexity,
    rmse,
    si_bias_postprocess,
    spearman,
)
from omic.solver import SolveOptions

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_rmse_examples():
    assert rmse([1, 2, 3], [1, 2, 3]) == 0
    assert rmse([0, 0], [3, 4]) == pytest.approx(5 / np.sqrt(2))
    with pytest.raises(ValueError):
        rmse([], [])
    with pytest.raises(ValueError):
        rmse([1], [1, 2])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(finite, finite, finite), min_size=1, max_size=30))
def test_rmse_symmetry_and_triangle(rows):
    t, p, q = (np.array(x) for x in zip(*rows))
    assert rmse(t, p) == pytest.approx(rmse(p, t))
    assert rmse(t, p) <= rmse(t, q) + rmse(q, p) + 1e-9


def _brute_ranks(x):
    ranks = np.empty(len(x))
    for i, v in enumerate(x):
        below = sum(1 for w in x if w < v)
        equal = sum(1 for w in x if w == v)
        ranks[i] = below + (equal + 1) / 2
    return ranks


def test_spearman_examples():
    x = np.array([3.0, 1.0, 2.0, 5.0])
    assert spearman(x, x) == pytest.approx(1.0)
    assert spearman(x, -x) == pytest.approx(-1.0)
    a = [1, 2, 2, 3, 3, 3, 4]
    b = [2, 1, 3, 3, 5, 4, 4]
    ra, rb = _brute_ranks(a), _brute_ranks(b)
    assert spearman(a, b) == pytest.approx(np.corrcoef(ra, rb)[0, 1])
    assert math.isnan(spearman([1, 1, 1], [1, 2, 3]))
    with pytest.raises(ValueError):
        spearman([1], [1])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(-1000, 1000), finite), min_size=3, max_size=30))
def test_spearman_monotone_invariance(pairs):
    x, y = (np.array(v, dtype=float) for v in zip(*pairs))
    base = spearman(x, y)
    # exact in floating point for these integers, so ties are preserved
    moved = spearman(3 * x**3 + x - 7, y)
    if math.isnan(base):
        assert math.isnan(moved)
    else:
        assert moved == pytest.approx(base, abs=1e-12)


def test_bias_deviation():
    u, b = np.array([1.0, -1.0]), np.array([0.5, 0.0, -0.5])
    assert bias_deviation((2.0, u, b), (2.0, u, b)) == (0, 0, 0)
    mbd, ubd, ibd = bias_deviation((2.0, u, b), (1.5, u + 0.3, b))
    assert mbd == pytest.approx(0.5)
    assert ubd == pytest.approx(0.3 * np.sqrt(2))
    assert ibd == 0
    with pytest.raises(ValueError):
        bias_deviation((0, u, b), (0, b, u))


def test_si_bias_postprocess(rng):
    g, u, b = si_bias_postprocess(np.full((4, 3), 2.5))
    assert g == pytest.approx(2.5)
    np.testing.assert_allclose(u, 0, atol=1e-15)
    np.testing.assert_allclose(b, 0, atol=1e-15)
    v = rng.standard_normal(5)
    v -= v.mean()
    g, u, b = si_bias_postprocess(np.outer(v, np.ones(4)))
    np.testing.assert_allclose(u, v, atol=1e-12)
    np.testing.assert_allclose(b, 0, atol=1e-12)
    R = rng.standard_normal((6, 7))
    g, u, b = si_bias_postprocess(R)
    total = sum(R[i, j] for i in range(6) for j in range(7)) / 42
    assert g == pytest.approx(total, abs=1e-12)
    for i in range(6):
        assert u[i] == pytest.approx(sum(R[i, j] - total for j in range(7)) / 7, abs=1e-12)
    for j in range(7):
        assert b[j] == pytest.approx(sum(R[i, j] - total for i in range(6)) / 6, abs=1e-12)


def test_bound_value():
    zero = {key: 0.0 for key in ((1, 1), (1, 2), (2, 1), (2, 2))}
    r = {key: 2 for key in zero}
    assert bound_value(3, 3, 100, 100, r, zero) == 0
    C = {**zero, (2, 2): 1.5}
    assert bound_value(3, 3, 100, 80, r, C) == pytest.approx(1.5**2 * 100 * 2 * math.log(100))
    C = {**zero, (2, 1): 1.0}
    swapped = bound_value(3, 3, 80, 100, r, {**zero, (1, 2): 1.0})
    assert swapped == pytest.approx(bound_value(3, 3, 100, 80, r, C))
    with pytest.raises(ValueError):
        bound_value(3, 3, 10, 10, {**r, (2, 2): 0}, {**zero, (2, 2): 1.0})
    with pytest.raises(ValueError):
        bound_value(0, 3, 10, 10, r, zero)


def test_sample_complexity_examples():
    m = 100
    R = np.full((m, m), 3.0)
    fam = build_bomic(m, m)
    lam = {(1, 1): 0.0, (1, 2): 1.0, (2, 1): 1.0, (2, 2): 1.0}
    order = sample_ordering(m, m, "uniform", seed=0)
    opts = SolveOptions(tol=1e-6, max_iters=5000)
    res = empirical_sample_complexity(R, fam, lam, order, epsilon=0.1, start=5, opts=opts)
    assert res.reached and res.n_epsilon <= 60
    res = empirical_sample_complexity(R, fam, lam, order, epsilon=math.inf, start=5)
    assert res.n_epsilon == 5
    res = empirical_sample_complexity(R + np.eye(m), fam, lam, order[:50], epsilon=1e-6, start=5)
    assert not res.reached and res.counts[-1] == 50


def test_sample_complexity_monotone_in_epsilon():
    M, users, items = gen_bound_matrix(4, 2, 0.5, 40, seed=0)
    fam = build_omicplus(users, items)
    lam = {(1, 1): 0.1, (1, 2): math.inf, (2, 1): math.inf, (2, 2): 0.5}
    order = sample_ordering(40, 40, "uniform", seed=1)
    opts = SolveOptions(tol=1e-4, max_iters=200)
    counts = [
        empirical_sample_complexity(M, fam, lam, order, eps, opts=opts).n_epsilon for eps in (0.05, 0.2, 0.5)
    ]
    assert counts[0] is None or counts[0] >= counts[1]
    assert counts[1] >= counts[2]


def test_calibrate_lambdas():
    M, users, items = gen_bound_matrix(4, 2, 1.0, 40, seed=0)
    lam = calibrate_lambdas(M, users, items, num=3, opts=SolveOptions(tol=1e-3, max_iters=100))
    assert math.isinf(lam[(1, 2)]) and math.isinf(lam[(2, 1)])
    assert lam[(1, 1)] >= 0 and lam[(2, 2)] >= 0


@pytest.mark.filterwarnings("ignore")
def test_compare_on_synthetic_small():
    inst = gen_synthetic(1.0, gamma=4, p_obs=0.3, m=40, n=40, seed=0)
    out = compare_on_synthetic(inst, grid_size=3, opts=SolveOptions(tol=1e-4, max_iters=200))
    assert set(out) == {"BOMIC", "B-SI", "SI"}
    for report in out.values():
        assert report.rmse >= 0 and -1 <= report.spc <= 1
        assert set(report.to_dict()) == {"rmse", "spc", "mbd", "ubd", "ibd"}
