"""Image-quality and subjective-score statistics.

SNR and CNR are in decibels (``20 log10`` of an amplitude ratio) and use the
sample standard deviation.  Edge preservation is the normalised correlation
of the 4-neighbour Laplacians of two images over a region.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage, special

from .errors import DegenerateError, InsufficientDataError, InvalidArgumentError

LAPLACIAN_KERNEL = np.array([[0.0, 1.0, 0.0],
                             [1.0, -4.0, 1.0],
                             [0.0, 1.0, 0.0]])

# IQR of the standard normal; IQR / this estimates sigma for normal data.
NORMAL_IQR = 1.349

MIN_EP_PIXELS = 9
MIN_PSEUDOSIGMA_VALUES = 4


def _region(image, mask, name="mask"):
    img = np.asarray(image, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if img.shape != m.shape:
        raise InvalidArgumentError(f"{name} {m.shape} does not match image {img.shape}")
    n = int(np.count_nonzero(m))
    if n == 0:
        raise InvalidArgumentError(f"{name} is empty")
    if n < 2:
        raise InsufficientDataError(f"{name} needs at least 2 pixels for a standard deviation")
    return img[m]


def _mean_std(values):
    mean = float(values.mean())
    std = float(values.std(ddof=1))
    if not std > 0:
        raise DegenerateError("region has zero standard deviation")
    return mean, std


def snr_db(image, mask) -> float:
    """``20 log10(mean / std)`` over the masked region."""
    mean, std = _mean_std(_region(image, mask))
    return 20.0 * math.log10(mean / std)


def cnr_db(image, mask_a, mask_b) -> float:
    """``20 log10(|mean_a - mean_b| / std_a)``; region A supplies the noise level."""
    mean_a, std_a = _mean_std(_region(image, mask_a, "mask_a"))
    b = np.asarray(image, dtype=np.float64)
    mb = np.asarray(mask_b, dtype=bool)
    if mb.shape != b.shape:
        raise InvalidArgumentError(f"mask_b {mb.shape} does not match image {b.shape}")
    b = b[mb]
    if b.size == 0:
        raise InvalidArgumentError("mask_b is empty")
    contrast = abs(mean_a - float(b.mean()))
    if contrast == 0.0:
        raise DegenerateError("regions have identical means (zero contrast)")
    return 20.0 * math.log10(contrast / std_a)


def laplacian(image) -> np.ndarray:
    """4-neighbour Laplacian with mirror (half-sample symmetric) borders."""
    return ndimage.convolve(np.asarray(image, dtype=np.float64), LAPLACIAN_KERNEL,
                            mode="reflect")


def edge_preservation(v, g_hat, mask) -> float:
    """Correlation of the Laplacians of ``v`` and ``g_hat`` inside ``mask``.

    Returns 1 when ``g_hat`` keeps every edge of ``v`` and -1 for a sign flip.

    Raises
    ------
    DegenerateError
        Either Laplacian is constant over the mask.
    """
    v = np.asarray(v, dtype=np.float64)
    g_hat = np.asarray(g_hat, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if v.shape != g_hat.shape or v.shape != m.shape:
        raise InvalidArgumentError(
            f"images {v.shape}, {g_hat.shape} and mask {m.shape} must share one shape")
    if np.count_nonzero(m) < MIN_EP_PIXELS:
        raise InsufficientDataError(f"edge preservation needs at least {MIN_EP_PIXELS} pixels")
    lv = laplacian(v)[m]
    lg = laplacian(g_hat)[m]
    lv -= lv.mean()
    lg -= lg.mean()
    denom = math.sqrt(float(np.dot(lv, lv)) * float(np.dot(lg, lg)))
    if denom == 0.0:
        raise DegenerateError("Laplacian is constant over the mask")
    return float(np.clip(np.dot(lv, lg) / denom, -1.0, 1.0))


def _score_matrix(scores):
    s = np.asarray(scores)
    if s.ndim != 2 or s.size == 0:
        raise InvalidArgumentError("scores must be a non-empty evaluators x slices matrix")
    if not np.all(np.isin(s, [1, 2, 3, 4, 5])):
        raise InvalidArgumentError("every score must be an integer from 1 to 5")
    return s.astype(np.int64)


def rank_sum(scores) -> int:
    """Total of every score in an evaluators x slices matrix."""
    return int(_score_matrix(scores).sum())


def _quartile(sorted_values, q):
    # position q (n - 1) + 1 in 1-indexed order statistics, linearly interpolated
    pos = q * (len(sorted_values) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(sorted_values) - 1)
    frac = pos - lo
    return sorted_values[lo] + frac * (sorted_values[hi] - sorted_values[lo])


def f_pseudosigma(values) -> float:
    """Interquartile range divided by 1.349, with linearly interpolated quartiles."""
    x = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if x.size < MIN_PSEUDOSIGMA_VALUES:
        raise InsufficientDataError(
            f"need at least {MIN_PSEUDOSIGMA_VALUES} values, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("values must be finite")
    return float((_quartile(x, 0.75) - _quartile(x, 0.25)) / NORMAL_IQR)


def score_median(values) -> float:
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise InvalidArgumentError("no values")
    return float(np.median(x))


# --------------------------------------------------------------------------
# paired t-test
# --------------------------------------------------------------------------

def student_t_two_tailed(t: float, dof: int) -> float:
    """``P(|T| >= |t|)`` for Student's t with ``dof`` degrees of freedom."""
    if dof < 1:
        raise InvalidArgumentError("degrees of freedom must be >= 1")
    if math.isinf(t):
        return 0.0
    # P(|T| >= |t|) = I_{dof / (dof + t^2)}(dof / 2, 1 / 2)
    return float(special.betainc(0.5 * dof, 0.5, dof / (dof + t * t)))


def paired_p_value(values_method, values_reference) -> float:
    """Two-tailed paired Student t-test of ``mean(method - reference) = 0``.

    Raises
    ------
    DegenerateError
        The paired differences have zero variance.
    """
    a = np.asarray(values_method, dtype=np.float64).ravel()
    b = np.asarray(values_reference, dtype=np.float64).ravel()
    if a.size != b.size:
        raise InvalidArgumentError(f"paired lists differ in length: {a.size} vs {b.size}")
    if a.size < 2:
        raise InsufficientDataError("need at least 2 pairs")
    diff = a - b
    sd = float(diff.std(ddof=1))
    if not sd > 0:
        raise DegenerateError("paired differences have zero variance")
    t = float(diff.mean()) / (sd / math.sqrt(diff.size))
    return student_t_two_tailed(t, diff.size - 1)
