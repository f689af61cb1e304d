import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memquant.batch_qr import qr_vertex_oracle, quantile_index, sample_quantile, solve_qr
from memquant.core import Batch, Observation, qr_objective
from memquant.errors import QuantileOutOfRange, RankDeficient, TooLarge


def _small(seed, n=20, p=2):
    r = np.random.default_rng(seed)
    x = r.uniform(size=(n, p))
    return Batch(x, x.sum(axis=1) + r.standard_normal(n))


def test_intercept_only_median():
    b = Batch.from_observations([Observation(v) for v in (1.0, 2.0, 3.0)])
    assert solve_qr(b, 0.5) == pytest.approx([2.0])


def test_matches_vertex_oracle_seed7():
    b = _small(7)
    ours = qr_objective(b, solve_qr(b, 0.3), 0.3)
    best = qr_objective(b, qr_vertex_oracle(b, 0.3), 0.3)
    assert ours <= best * (1 + 1e-6)
    assert best <= ours + 1e-9


@pytest.mark.parametrize("tau", [0.1, 0.3, 0.5, 0.7, 0.9])
@pytest.mark.parametrize("seed", range(8))
def test_objective_matches_oracle(seed, tau):
    b = _small(100 + seed, n=15, p=2)
    ours = qr_objective(b, solve_qr(b, tau), tau)
    best = qr_objective(b, qr_vertex_oracle(b, tau), tau)
    assert abs(ours - best) <= 1e-6 * best


def test_exact_fit_recovered():
    r = np.random.default_rng(3)
    x = r.uniform(size=(60, 3))
    beta = np.array([0.5, -1.0, 2.0, 3.0])
    b = Batch(x, beta[0] + x @ beta[1:])
    assert np.allclose(solve_qr(b, 0.4), beta, atol=1e-8)


def test_against_lp_on_larger_problem():
    from scipy.optimize import linprog

    r = np.random.default_rng(5)
    x = r.uniform(size=(150, 4))
    b = Batch(x, x.sum(1) + r.standard_exponential(150))
    tau = 0.8
    n, pp = b.design.shape
    res = linprog(np.r_[np.zeros(pp), np.full(n, tau), np.full(n, 1 - tau)],
                  A_eq=np.hstack([b.design, np.eye(n), -np.eye(n)]), b_eq=b.y,
                  bounds=[(None, None)] * pp + [(0, None)] * (2 * n), method="highs")
    assert qr_objective(b, solve_qr(b, tau), tau) == pytest.approx(res.fun, rel=1e-7)


def test_permutation_and_equivariance():
    b = _small(21, n=80, p=3)
    beta = solve_qr(b, 0.35)
    perm = np.random.default_rng(1).permutation(b.n)
    assert np.allclose(solve_qr(b.take(perm), 0.35), beta, atol=1e-8)
    scaled = Batch(b.x, 3.0 * b.y)
    assert np.allclose(solve_qr(scaled, 0.35), 3.0 * beta, atol=1e-8)
    shifted = Batch(b.x, b.y + 2.5)
    expect = beta.copy()
    expect[0] += 2.5
    assert np.allclose(solve_qr(shifted, 0.35), expect, atol=1e-8)


def test_full_output_reports_method():
    beta, info = solve_qr(_small(2, n=100, p=3), 0.5, full_output=True)
    assert info.method in ("vertex", "lp") and info.objective > 0


def test_rank_deficient():
    x = np.ones((10, 2))
    with pytest.raises(RankDeficient):
        solve_qr(Batch(x, np.arange(10.0)), 0.5)
    with pytest.raises(RankDeficient):
        solve_qr(Batch(np.zeros((1, 3)), [1.0]), 0.5)


def test_oracle_guards_and_vertex_property():
    with pytest.raises(TooLarge):
        qr_vertex_oracle(_small(1, n=31), 0.5)
    with pytest.raises(TooLarge):
        qr_vertex_oracle(_small(1, n=10, p=4), 0.5)
    b = _small(4, n=4, p=2)
    beta = qr_vertex_oracle(b, 0.5)
    assert np.sum(np.abs(b.y - b.design @ beta) < 1e-9) >= 3


def test_oracle_with_duplicates():
    b = _small(9, n=8, p=1)
    dup = Batch(np.vstack([b.x, b.x]), np.r_[b.y, b.y])
    assert np.allclose(qr_objective(dup, qr_vertex_oracle(dup, 0.4), 0.4),
                       2 * qr_objective(b, qr_vertex_oracle(b, 0.4), 0.4))


def test_sample_quantile_examples():
    assert sample_quantile([5, 3, 1, 2, 4], 0.5) == 3.0
    assert sample_quantile([7.0], 0.5) == 7.0
    ys = np.random.default_rng(0).standard_normal(100)
    s = np.sort(ys)
    assert sample_quantile(ys, 0.1) == pytest.approx(0.9 * s[9] + 0.1 * s[10], rel=1e-12)
    assert quantile_index(100, 0.1) == (10, pytest.approx(0.1))


def test_sample_quantile_out_of_range():
    with pytest.raises(QuantileOutOfRange):
        sample_quantile([1.0, 2.0], 0.1)
    with pytest.raises(QuantileOutOfRange):
        sample_quantile([], 0.5)
    with pytest.raises(QuantileOutOfRange):
        sample_quantile([1.0, 2.0, 3.0], 0.95)


@settings(max_examples=30)
@given(st.lists(st.floats(-100, 100), min_size=5, max_size=40), st.floats(0.2, 0.5))
def test_sample_quantile_monotone(values, t):
    assert sample_quantile(values, t) <= sample_quantile(values, t + 0.3) + 1e-12
