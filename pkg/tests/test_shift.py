import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adaptstress.shift import (ShiftError, kl_divergence, mmd, shift_report, shift_score, squash,
                               variance_ratio_score)


def gaussian(n, mean, scale=1.0, d=3, seed=0):
    return np.random.default_rng(seed).normal(mean, scale, size=(n, d))


def test_mmd_identical_is_zero():
    x = gaussian(200, 0.0)
    assert mmd(x, x) == 0.0


def test_mmd_unit_mean_offset():
    a = np.zeros((5, 2))
    b = np.tile([1.0, 0.0], (5, 1))
    assert mmd(a, b) == pytest.approx(1.0, abs=1e-12)


def test_mmd_monotone_in_mean_offset():
    src = gaussian(500, 0.0, seed=1)
    base = gaussian(500, 0.0, seed=2)
    values = [mmd(src, base + delta) for delta in np.linspace(0, 3, 13)]
    assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))


def test_kl_identical_near_zero():
    x = gaussian(300, 0.0)
    assert kl_divergence(x, x) <= 1e-4


def test_kl_disjoint_large_but_finite():
    a = gaussian(300, -10.0, 0.1)
    b = gaussian(300, 10.0, 0.1, seed=5)
    v = kl_divergence(a, b)
    assert np.isfinite(v) and v > 5.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(0.2, 4))
def test_kl_nonnegative(seed, shift, scale):
    a = gaussian(60, 0.0, seed=seed)
    b = gaussian(60, shift, scale, seed=seed + 1)
    assert kl_divergence(a, b) >= 0.0


def test_variance_ratio_equal_variances():
    x = gaussian(100, 0.0)
    assert variance_ratio_score(x, x.copy()) == pytest.approx(0.0, abs=1e-12)


def test_variance_ratio_four_times():
    x = gaussian(100, 0.0)
    y = 2.0 * (x - x.mean(axis=0))
    assert variance_ratio_score(x, y) == pytest.approx(0.75, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_variance_ratio_below_one(seed, scale):
    a = gaussian(30, 0.0, seed=seed)
    b = gaussian(30, 0.0, scale, seed=seed + 7)
    assert 0.0 <= variance_ratio_score(a, b) < 1.0


def test_score_zero_and_mmd_limit():
    assert shift_score(0.0, 0.0, 0.0) == 0.0
    assert shift_score(1e12, 0.0, 0.0) == pytest.approx(1 / 3, abs=1e-9)
    assert squash(0.0) == 0.0


def test_score_weights_validated():
    with pytest.raises(ShiftError):
        shift_score(0.1, 0.1, 0.1, weights=(0.5, 0.5, 0.5))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-5, 5), st.floats(0.1, 10))
def test_s_dist_in_unit_interval(seed, shift, scale):
    r = shift_report(gaussian(40, 0.0, seed=seed), gaussian(40, shift, scale, seed=seed + 3))
    assert 0.0 <= r.s_dist <= 1.0


def test_shape_mismatch_rejected():
    with pytest.raises(ShiftError):
        mmd(np.zeros((3, 2)), np.zeros((3, 3)))


def test_bigger_shift_scores_higher():
    src = gaussian(300, 0.0)
    near = shift_report(src, gaussian(300, 0.1, seed=9)).s_dist
    far = shift_report(src, gaussian(300, 2.0, 3.0, seed=9)).s_dist
    assert far > near
