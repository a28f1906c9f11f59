"""Endorectal coil SNR profile, coil distance maps and the non-stationary scale map."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InsufficientDataError, InvalidArgumentError
from .rician import MIN_FIT_SAMPLES, fit_rician_ml_many

MIN_USABLE_WINDOWS = 10


class CoilKind(str, Enum):
    POINT = "point"
    SEGMENT = "segment"


@dataclass(frozen=True)
class CoilGeometry:
    """Coil position in pixel coordinates ``(row, col)``.

    ``p1`` is ignored for point coils.  Pixel spacing is isotropic.
    """

    kind: CoilKind
    p0: tuple[float, float]
    p1: tuple[float, float] | None = None
    spacing_mm: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", CoilKind(self.kind))
        if not (self.spacing_mm > 0 and math.isfinite(self.spacing_mm)):
            raise InvalidArgumentError("spacing_mm must be a positive finite number")
        if self.kind is CoilKind.SEGMENT and self.p1 is None:
            raise InvalidArgumentError("segment coils need both end points")

    def points(self):
        if self.kind is CoilKind.POINT:
            return [tuple(self.p0)]
        return [tuple(self.p0), tuple(self.p1)]

    def transposed(self) -> "CoilGeometry":
        swap = lambda p: None if p is None else (p[1], p[0])  # noqa: E731
        return CoilGeometry(self.kind, swap(self.p0), swap(self.p1), self.spacing_mm)


@dataclass(frozen=True)
class ErcSnrProfile:
    """SNR gain versus distance from the coil surface.

    ``gamma(d) = 1 + (surface_gain - 1) exp(-d / decay_length_mm)`` up to
    ``cutoff_mm``, then a constant ``post_cutoff_gain``.
    """

    surface_gain: float
    decay_length_mm: float
    cutoff_mm: float
    post_cutoff_gain: float

    def __post_init__(self):
        if not self.surface_gain >= 1.0:
            raise InvalidArgumentError("surface_gain must be >= 1")
        if not self.decay_length_mm > 0:
            raise InvalidArgumentError("decay_length_mm must be > 0")
        if not self.cutoff_mm > 0:
            raise InvalidArgumentError("cutoff_mm must be > 0")
        if not 0.0 < self.post_cutoff_gain <= 1.0:
            raise InvalidArgumentError("post_cutoff_gain must lie in (0, 1]")

    @classmethod
    def rigid(cls) -> "ErcSnrProfile":
        return cls(surface_gain=5.0, decay_length_mm=20.0, cutoff_mm=60.0, post_cutoff_gain=0.5)

    @classmethod
    def inflatable(cls) -> "ErcSnrProfile":
        return cls(surface_gain=2.0, decay_length_mm=25.0, cutoff_mm=60.0, post_cutoff_gain=0.5)

    @classmethod
    def flat(cls) -> "ErcSnrProfile":
        """Stationary noise: gain 1 everywhere."""
        return cls(surface_gain=1.0, decay_length_mm=1.0, cutoff_mm=1.0, post_cutoff_gain=1.0)


PRESETS = {
    "rigid": ErcSnrProfile.rigid,
    "inflatable": ErcSnrProfile.inflatable,
    "flat": ErcSnrProfile.flat,
}


@dataclass(frozen=True)
class ScaleMap:
    """Per-pixel Rician scale ``phi(s) = sigma0 / gamma(d(s))``."""

    values: np.ndarray
    sigma0: float

    def __post_init__(self):
        if not np.all(self.values > 0):
            raise InvalidArgumentError("every scale-map value must be > 0")

    @property
    def shape(self):
        return self.values.shape

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def snr_gain(profile: ErcSnrProfile, d):
    """Evaluate the SNR gain ``gamma`` at distance(s) ``d`` in mm."""
    arr = np.asarray(d, dtype=np.float64)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise InvalidArgumentError("distance must be finite and >= 0")
    inside = 1.0 + (profile.surface_gain - 1.0) * np.exp(-arr / profile.decay_length_mm)
    gain = np.where(arr <= profile.cutoff_mm, inside, profile.post_cutoff_gain)
    return float(gain) if gain.ndim == 0 else gain


def distance_map(geom: CoilGeometry, rows: int, cols: int) -> np.ndarray:
    """Euclidean distance in mm from every pixel centre to the coil."""
    if rows < 1 or cols < 1:
        raise InvalidArgumentError("grid must have at least one row and column")
    for r, c in geom.points():
        if not (0 <= r <= rows - 1 and 0 <= c <= cols - 1):
            raise InvalidArgumentError(f"coil point {(r, c)} lies outside the {rows}x{cols} grid")

    rr, cc = np.meshgrid(np.arange(rows, dtype=np.float64),
                         np.arange(cols, dtype=np.float64), indexing="ij")
    r0, c0 = (float(v) for v in geom.p0)
    if geom.kind is CoilKind.POINT:
        dist = np.hypot(rr - r0, cc - c0)
    else:
        r1, c1 = (float(v) for v in geom.p1)
        dr, dc = r1 - r0, c1 - c0
        seg2 = dr * dr + dc * dc
        if seg2 == 0.0:
            t = np.zeros_like(rr)
        else:
            t = np.clip(((rr - r0) * dr + (cc - c0) * dc) / seg2, 0.0, 1.0)
        dist = np.hypot(rr - (r0 + t * dr), cc - (c0 + t * dc))
    return dist * geom.spacing_mm


def scale_map_from_profile(dmap, profile: ErcSnrProfile, sigma0: float) -> ScaleMap:
    if not sigma0 > 0:
        raise InvalidArgumentError("sigma0 must be > 0")
    return ScaleMap(values=sigma0 / snr_gain(profile, dmap), sigma0=float(sigma0))


def local_scale_estimates(image, window_radius=4, stride=4):
    """ML Rician fits over square windows centred on a regular subsample grid.

    Returns
    -------
    centres : (k, 2) int array
    nu, phi : (k,) float arrays
        Windows with fewer than 8 positive pixels are skipped.
    """
    img = np.asarray(image, dtype=np.float64)
    rows, cols = img.shape
    centres, windows = [], []
    for r in range(window_radius, rows - window_radius, stride):
        for c in range(window_radius, cols - window_radius, stride):
            win = img[r - window_radius:r + window_radius + 1,
                      c - window_radius:c + window_radius + 1].ravel()
            win = win[win > 0]
            if win.size < MIN_FIT_SAMPLES:
                continue
            centres.append((r, c))
            windows.append(win)
    nus, phis = fit_rician_ml_many(windows)
    return np.array(centres, dtype=np.int64).reshape(-1, 2), nus, phis


def fit_scale_map(image, dmap, profile: ErcSnrProfile, window_radius: int = 4, *,
                  stride: int = 4, max_signal_ratio: float = 2.0) -> ScaleMap:
    """Fit the base noise scale ``sigma0`` and expand it into a scale map.

    Local ML scale estimates ``phi_i`` are taken on
    ``(2 * window_radius + 1)``-square windows.  Windows whose signal
    estimate exceeds ``max_signal_ratio * phi_i`` are treated as
    signal-dominated and dropped.  ``sigma0`` minimises
    ``sum_i (phi_i - sigma0 / gamma(d_i))^2``, which has the closed form
    ``sum(phi_i / gamma_i) / sum(1 / gamma_i^2)``.

    Raises
    ------
    InsufficientDataError
        The image has no positive pixels, or fewer than 10 windows survive.
    """
    img = np.asarray(image, dtype=np.float64)
    dmap = np.asarray(dmap, dtype=np.float64)
    if img.ndim != 2 or img.shape != dmap.shape:
        raise InvalidArgumentError(
            f"image {img.shape} and distance map {dmap.shape} must be equal 2-D grids")
    if window_radius < 2:
        raise InvalidArgumentError("window_radius must be >= 2")
    if stride < 1:
        raise InvalidArgumentError("stride must be >= 1")
    if not np.any(img > 0):
        raise InsufficientDataError("image has no positive intensities")

    centres, nus, phis = local_scale_estimates(img, window_radius, stride)
    keep = nus <= max_signal_ratio * phis
    if np.count_nonzero(keep) < MIN_USABLE_WINDOWS:
        raise InsufficientDataError(
            f"only {np.count_nonzero(keep)} noise-dominated windows "
            f"(need {MIN_USABLE_WINDOWS}); supply a precomputed scale map")
    c = centres[keep]
    inv_gamma = 1.0 / snr_gain(profile, dmap[c[:, 0], c[:, 1]])
    # fixed window order keeps the reduction deterministic
    sigma0 = float(np.dot(phis[keep], inv_gamma) / np.dot(inv_gamma, inv_gamma))
    return scale_map_from_profile(dmap, profile, sigma0)
