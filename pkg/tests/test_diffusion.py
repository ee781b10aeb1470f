import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hs

from candiff import diffusion as df


def test_schedule_matches_direct_product():
    s = df.linear_schedule(500, 1e-4, 0.02)
    direct = 1.0
    for b in np.linspace(1e-4, 0.02, 500):
        direct *= 1.0 - b
    assert s.ab(500) == pytest.approx(direct, rel=1e-12)
    assert abs(s.ab(500) - 6.4e-3) / 6.4e-3 < 0.05
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert s.ab(0) == 1.0


def test_single_step_schedule():
    s = df.linear_schedule(1, 0.01, 0.01)
    assert s.ab(1) == pytest.approx(0.99)


@settings(max_examples=30, deadline=None)
@given(hs.integers(1, 600), hs.floats(1e-5, 0.01), hs.floats(0, 0.5))
def test_schedule_strictly_decreasing(N, b0, extra):
    s = df.linear_schedule(N, b0, min(b0 + extra, 0.9))
    assert np.all(np.diff(np.concatenate([[1.0], s.alpha_bar])) < 0)


def test_schedule_validation():
    with pytest.raises(ValueError):
        df.linear_schedule(10, 0.0, 0.1)
    with pytest.raises(ValueError):
        df.linear_schedule(10, 0.2, 0.1)


def test_forward_and_inverse(rng):
    s = df.linear_schedule(100)
    x0, eps = rng.standard_normal((8, 4)), rng.standard_normal((8, 4))
    np.testing.assert_allclose(df.forward_corrupt(x0, 30, 0 * eps, s), math.sqrt(s.ab(30)) * x0)
    np.testing.assert_allclose(df.forward_corrupt(0 * x0, 30, eps, s), math.sqrt(1 - s.ab(30)) * eps)
    xn = df.forward_corrupt(x0, 30, eps, s)
    np.testing.assert_allclose(df.x0_from_eps(xn, 30, eps, s), x0, atol=1e-12)


def test_posterior_matches_adjacent_formula(rng):
    s = df.linear_schedule(50)
    x0, xn = rng.standard_normal(5), rng.standard_normal(5)
    n = 20
    beta = s.beta[n - 1]
    mean, std = df.posterior(xn, x0, n, n - 1, s)
    ab_n, ab_p = s.ab(n), s.ab(n - 1)
    ref = math.sqrt(ab_p) * beta / (1 - ab_n) * x0 + math.sqrt(1 - beta) * (1 - ab_p) / (1 - ab_n) * xn
    np.testing.assert_allclose(mean, ref, rtol=1e-12)
    assert std**2 == pytest.approx((1 - ab_p) / (1 - ab_n) * beta)


def test_reverse_step_determinism_and_final(rng):
    s = df.linear_schedule(20)
    x, e = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    a = df.reverse_step(x, e, 10, 5, s, np.random.default_rng(1))
    b = df.reverse_step(x, e, 10, 5, s, np.random.default_rng(1))
    assert np.array_equal(a, b)
    final = df.reverse_step(x, e, 3, 0, s, None)
    np.testing.assert_allclose(final, df.x0_from_eps(x, 3, e, s), atol=1e-12)
    with pytest.raises(ValueError):
        df.reverse_step(x, e, 5, 5, s)


def test_strided_plans():
    assert df.strided_steps(8, 4) == [0, 2, 4, 6, 8]
    p = df.strided_plan(8, 4)
    assert p.transitions == ((8, 6), (6, 4), (4, 2), (2, 0))
    assert df.strided_plan(500, 16).n_reverse == 16
    full = df.strided_plan(30, 30)
    assert full.transitions == tuple((n, n - 1) for n in range(30, 0, -1))
    with pytest.raises(ValueError):
        df.strided_plan(10, 11)


def test_repaint_enumeration():
    p = df.repaint_plan(4, 2, 2)
    assert p.transitions == ((4, 3), (3, 2), (2, 4), (4, 3), (3, 2), (2, 1), (1, 0), (0, 2), (2, 1), (1, 0))
    assert (p.n_reverse, p.n_forward) == (8, 2)
    q = df.repaint_plan(16, 5, 5)
    assert q.transitions[-1][1] == 0 and q.n_reverse > 16
    assert df.repaint_plan(6, 3, 1).transitions == df.naive_plan(6, 6).transitions


@settings(max_examples=40, deadline=None)
@given(hs.integers(1, 40), hs.integers(1, 8), hs.integers(1, 6))
def test_repaint_counts(K, j, r):
    p = df.repaint_plan(K, j, r)
    assert p.transitions[-1][1] == 0
    if K % j == 0:
        assert p.n_reverse == K * r
        assert p.n_forward == (K // j) * (r - 1)


def test_repaint_on_longer_chain():
    p = df.make_plan(500, 64, df.REPAINT, 5, 5)
    assert p.start == 500 and p.kind == df.REPAINT
    assert all(0 <= a <= 500 and 0 <= b <= 500 for a, b in p)


@pytest.mark.parametrize("K", [4, 16, 500])
def test_perfect_denoiser_identity(K, rng):
    s = df.linear_schedule(500)
    x0 = rng.standard_normal((2, 32, 4))
    oracle = df.OracleDenoiser(x0, s)
    out = df.sample_future(oracle, np.zeros_like(x0), None, df.strided_plan(500, K), s, rng, sigma_scale=0.0)
    assert np.abs(out - x0).max() <= 1e-6


@pytest.mark.parametrize("plan", [df.naive_plan(100, 10), df.repaint_plan(10, 5, 3, N=100)])
def test_imputation_keeps_known_values_and_fills_unknown(plan, rng):
    s = df.linear_schedule(100)
    gt = rng.standard_normal((16, 4))
    mask = np.zeros((16, 4), dtype=bool)
    mask[3:9, 1:3] = True
    oracle = df.OracleDenoiser(gt, s)
    out = df.impute_window(oracle, np.zeros((16, 4)), gt, mask, None, plan, s, rng, sigma_scale=0.0)
    assert np.array_equal(out[~mask], gt[~mask])
    assert np.abs(out - gt).max() <= 1e-6


def test_imputation_rejects_strided_plan(rng):
    s = df.linear_schedule(10)
    with pytest.raises(ValueError):
        df.impute_window(None, np.zeros((4, 4)), np.zeros((4, 4)), np.ones((4, 4)), None, df.strided_plan(10, 5), s, rng)


def test_impute_combine():
    known, model = np.zeros((3, 2)), np.ones((3, 2))
    assert np.array_equal(df.impute_combine(known, model, np.zeros((3, 2))), known)
    m = np.array([[1, 0], [0, 0], [0, 1]])
    assert df.impute_combine(known, model, m).sum() == 2


def test_sample_future_per_row_streams(rng):
    s = df.linear_schedule(20)
    x0 = np.zeros((3, 8, 4))
    oracle = df.OracleDenoiser(x0, s)
    plan = df.strided_plan(20, 5)
    rows = [np.random.default_rng(i) for i in range(3)]
    batch = df.sample_future(oracle, x0, None, plan, s, rows)
    single = df.sample_future(df.OracleDenoiser(x0[1:2], s), x0[1:2], None, plan, s, [np.random.default_rng(1)])
    np.testing.assert_allclose(batch[1:2], single, atol=1e-12)


def test_non_finite_denoiser_raises(rng):
    class Bad:
        def predict_eps(self, past, fut, cond, n):
            return np.full_like(fut, np.nan)

    s = df.linear_schedule(10)
    with pytest.raises(df.NumericalError) as info:
        df.sample_future(Bad(), np.zeros((1, 4, 4)), None, df.strided_plan(10, 2), s, rng)
    assert info.value.step == 10
