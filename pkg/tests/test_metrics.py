import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage, stats

from ercdenoise.errors import DegenerateError, InsufficientDataError, InvalidArgumentError
from ercdenoise.metrics import (
    cnr_db,
    edge_preservation,
    f_pseudosigma,
    paired_p_value,
    rank_sum,
    score_median,
    snr_db,
    student_t_two_tailed,
)

# Phantom tables: cases DWI b=0, DWI b=1000, T2
BACKGROUND_SNR = {
    "ACER": [33.2, 27.5, 29.2], "ROVST": [32.0, 27.6, 27.0], "LMMSE": [31.6, 26.4, 27.6],
    "UC": [30.6, 25.9, 26.9],
}
PROSTATE_SNR = {
    "ACER": [27.0, 27.3, 27.2], "ROVST": [26.8, 27.5, 26.7], "LMMSE": [26.7, 26.9, 26.9],
    "UC": [26.1, 25.7, 26.7],
}
CNR = {"ACER": [27.1, 20.9, 19.7], "ROVST": [25.9, 21.0, 17.6], "UC": [24.5, 19.4, 17.5]}


def region_with(mean, std, n=50):
    # exact sample mean and sample standard deviation
    z = np.random.default_rng(0).standard_normal(n)
    z = (z - z.mean()) / z.std(ddof=1)
    return mean + std * z


# ---------------------------------------------------------------- SNR / CNR

def test_snr_golden_values():
    img = region_with(10.0, 1.0).reshape(5, 10)
    mask = np.ones_like(img, dtype=bool)
    assert snr_db(img, mask) == pytest.approx(20.0, abs=1e-12)
    img = region_with(10.0, 10.0).reshape(5, 10)
    assert snr_db(img, mask) == pytest.approx(0.0, abs=1e-12)


def test_snr_matches_two_pass_oracle():
    rng = np.random.default_rng(1)
    img = rng.uniform(5, 50, (30, 40))
    mask = rng.random((30, 40)) < 0.3
    vals = [img[i, j] for i in range(30) for j in range(40) if mask[i, j]]
    mean = sum(vals) / len(vals)
    std = math.sqrt(sum((v - mean) ** 2 for v in vals) / (len(vals) - 1))
    assert snr_db(img, mask) == pytest.approx(20 * math.log10(mean / std), abs=1e-9)


def test_cnr_golden_value():
    a = region_with(10.0, 0.5)
    b = np.full(50, 5.0)
    img = np.concatenate([a, b]).reshape(10, 10)
    mask_a = np.zeros((10, 10), bool)
    mask_a.flat[:50] = True
    assert cnr_db(img, mask_a, ~mask_a) == pytest.approx(20.0, abs=1e-12)


def test_cnr_matches_direct_computation():
    rng = np.random.default_rng(2)
    img = rng.uniform(0, 100, (20, 20))
    a = np.zeros((20, 20), bool)
    a[:8] = True
    b = np.zeros((20, 20), bool)
    b[12:, 5:] = True
    want = 20 * math.log10(abs(img[a].mean() - img[b].mean()) / img[a].std(ddof=1))
    assert cnr_db(img, a, b) == pytest.approx(want, abs=1e-9)


def test_cnr_identical_regions_is_degenerate():
    img = np.random.default_rng(3).random((6, 6))
    mask = np.ones((6, 6), bool)
    with pytest.raises(DegenerateError):
        cnr_db(img, mask, mask)


def test_region_errors():
    img = np.ones((4, 4))
    with pytest.raises(DegenerateError):
        snr_db(img, np.ones((4, 4), bool))
    with pytest.raises(InvalidArgumentError):
        snr_db(img, np.zeros((4, 4), bool))
    with pytest.raises(InvalidArgumentError):
        snr_db(img, np.ones((4, 5), bool))
    one = np.zeros((4, 4), bool)
    one[0, 0] = True
    with pytest.raises(InsufficientDataError):
        snr_db(img, one)
    with pytest.raises(InvalidArgumentError):
        cnr_db(np.arange(16.0).reshape(4, 4), np.ones((4, 4), bool), np.zeros((4, 4), bool))


@settings(max_examples=40, deadline=None)
@given(c=st.floats(1e-3, 1e3))
def test_snr_cnr_scale_invariant(c):
    rng = np.random.default_rng(4)
    img = rng.uniform(1, 10, (12, 12))
    a = np.zeros((12, 12), bool)
    a[:6] = True
    assert snr_db(c * img, a) == pytest.approx(snr_db(img, a), abs=1e-9)
    assert cnr_db(c * img, a, ~a) == pytest.approx(cnr_db(img, a, ~a), abs=1e-9)


# ---------------------------------------------------------------- edge preservation

def _textured(seed=5, shape=(40, 40)):
    rng = np.random.default_rng(seed)
    img = ndimage.gaussian_filter(rng.random(shape), 1.0) * 100
    img[10:25, 12:30] += 50
    return img


def test_ep_identity():
    v = _textured()
    mask = np.ones_like(v, bool)
    assert edge_preservation(v, v, mask) == pytest.approx(1.0, abs=1e-12)


def test_ep_sign_flip():
    v = _textured()
    assert edge_preservation(v, -v, np.ones_like(v, bool)) == pytest.approx(-1.0, abs=1e-12)


def test_ep_decreases_with_blur():
    v = _textured()
    mask = np.zeros_like(v, bool)
    mask[5:35, 5:35] = True
    light = edge_preservation(v, ndimage.gaussian_filter(v, 0.5), mask)
    heavy = edge_preservation(v, ndimage.gaussian_filter(v, 2.0), mask)
    assert heavy < light < 1.0


def test_ep_matches_direct_correlation():
    v = _textured(6)
    g = ndimage.gaussian_filter(v, 0.8)
    mask = np.zeros_like(v, bool)
    mask[3:30, 8:38] = True

    def lap(x):
        p = np.pad(x, 1, mode="symmetric")
        return p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4 * x

    want = np.corrcoef(lap(v)[mask], lap(g)[mask])[0, 1]
    assert edge_preservation(v, g, mask) == pytest.approx(want, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(1e-2, 1e2), b=st.floats(-1e3, 1e3))
def test_ep_affine_invariance(a, b):
    v = _textured(7)
    g = ndimage.gaussian_filter(v, 0.7)
    mask = np.ones_like(v, bool)
    assert edge_preservation(v, a * g + b, mask) == pytest.approx(
        edge_preservation(v, g, mask), abs=1e-9)


def test_ep_errors():
    v = _textured()
    with pytest.raises(DegenerateError):
        edge_preservation(v, np.ones_like(v), np.ones_like(v, bool))
    small = np.zeros_like(v, bool)
    small[0, :8] = True
    with pytest.raises(InsufficientDataError):
        edge_preservation(v, v, small)
    with pytest.raises(InvalidArgumentError):
        edge_preservation(v, v[:-1], np.ones_like(v, bool))


# ---------------------------------------------------------------- scores

def test_rank_sum_golden():
    assert rank_sum(np.full((7, 3), 3)) == 63
    assert rank_sum(np.ones((4, 6), int)) == 24


def test_rank_sum_matches_double_loop():
    s = np.random.default_rng(8).integers(1, 6, (9, 5))
    total = 0
    for i in range(9):
        for j in range(5):
            total += int(s[i, j])
    assert rank_sum(s) == total


@settings(max_examples=40, deadline=None)
@given(s=arrays(np.int64, st.tuples(st.integers(1, 6), st.integers(2, 8)),
                elements=st.integers(1, 5)), data=st.data())
def test_rank_sum_additive_over_columns(s, data):
    k = data.draw(st.integers(1, s.shape[1] - 1))
    assert rank_sum(s) == rank_sum(s[:, :k]) + rank_sum(s[:, k:])


@pytest.mark.parametrize("bad", [np.array([[0, 3]]), np.array([[6]]), np.array([[2.5]]),
                                 np.array([1, 2, 3]), np.zeros((0, 3), int)])
def test_rank_sum_rejects_invalid(bad):
    with pytest.raises(InvalidArgumentError):
        rank_sum(bad)


def test_f_pseudosigma_golden():
    assert f_pseudosigma([1, 2, 3, 4, 5]) == pytest.approx(1.4826, abs=1e-4)
    assert f_pseudosigma([4, 4, 4, 4, 4, 4]) == 0.0


def test_f_pseudosigma_matches_sort_and_interpolate():
    x = np.random.default_rng(9).normal(size=37)
    s = sorted(x)

    def q(p):
        h = p * (len(s) - 1) + 1
        lo = int(math.floor(h))
        return s[lo - 1] + (h - lo) * (s[min(lo, len(s) - 1)] - s[lo - 1])

    assert f_pseudosigma(x) == pytest.approx((q(0.75) - q(0.25)) / 1.349, abs=1e-12)
    # numpy's default percentile uses the same convention
    assert f_pseudosigma(x) == pytest.approx(stats.iqr(x) / 1.349, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(x=arrays(np.float64, st.integers(4, 40), elements=st.floats(-1e3, 1e3)),
       shift=st.floats(-1e3, 1e3), scale=st.floats(0.0, 100.0))
def test_f_pseudosigma_translation_and_scale(x, shift, scale):
    base = f_pseudosigma(x)
    assert f_pseudosigma(x + shift) == pytest.approx(base, abs=1e-9 * (1 + abs(shift)))
    assert f_pseudosigma(scale * x) == pytest.approx(scale * base, rel=1e-9, abs=1e-9)


def test_f_pseudosigma_needs_four_values():
    with pytest.raises(InsufficientDataError):
        f_pseudosigma([1, 2, 3])


def test_score_median():
    assert score_median([[1, 5], [3, 4]]) == 3.5


# ---------------------------------------------------------------- t-test

def test_t_tail_against_mpmath():
    for dof in (1, 2, 5, 30):
        for t in (0.0, 0.3, 1.7, 4.2, 25.0):
            x = dof / (dof + t * t)
            with mpmath.workdps(30):
                want = float(mpmath.betainc(dof / 2, 0.5, 0, x, regularized=True))
            assert student_t_two_tailed(t, dof) == pytest.approx(want, rel=1e-10, abs=1e-300)


@pytest.mark.parametrize("table,method,expected", [
    (BACKGROUND_SNR, "ACER", 0.02), (BACKGROUND_SNR, "ROVST", 0.16),
    (BACKGROUND_SNR, "LMMSE", 0.04), (PROSTATE_SNR, "ACER", 0.10),
    (PROSTATE_SNR, "ROVST", 0.25), (PROSTATE_SNR, "LMMSE", 0.14),
    (CNR, "ACER", 0.02), (CNR, "ROVST", 0.16),
])
def test_published_p_values(table, method, expected):
    assert paired_p_value(table[method], table["UC"]) == pytest.approx(expected, abs=0.03)


def test_paired_p_matches_scipy():
    rng = np.random.default_rng(10)
    for n in (2, 3, 8, 50):
        a = rng.normal(size=n)
        b = a + rng.normal(0.3, 1.0, size=n)
        assert paired_p_value(a, b) == pytest.approx(stats.ttest_rel(a, b).pvalue, rel=1e-10)


@settings(max_examples=40, deadline=None)
@given(a=arrays(np.float64, 6, elements=st.floats(-100, 100)),
       b=arrays(np.float64, 6, elements=st.floats(-100, 100)))
def test_paired_p_symmetric(a, b):
    d = a - b
    if np.std(d) < 1e-6 * (1 + np.max(np.abs(d))):
        return
    p = paired_p_value(a, b)
    assert 0.0 <= p <= 1.0
    assert paired_p_value(b, a) == pytest.approx(p, abs=1e-12)


def test_paired_p_errors():
    with pytest.raises(DegenerateError):
        paired_p_value([1, 2, 3], [1, 2, 3])
    with pytest.raises(DegenerateError):
        paired_p_value([2, 3, 4], [1, 2, 3])
    with pytest.raises(InvalidArgumentError):
        paired_p_value([1, 2], [1, 2, 3])
    with pytest.raises(InsufficientDataError):
        paired_p_value([1], [2])
