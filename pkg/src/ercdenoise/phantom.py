"""Synthetic prostate phantom and non-stationary Rician corruption."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, InvalidSpecError
from .profile import CoilGeometry, CoilKind, ScaleMap


@dataclass(frozen=True)
class Lesion:
    center: tuple[float, float]  # (row, col) in pixels
    radius_mm: float


def _default_lesions():
    return (
        Lesion((200.0, 105.0), 4.5),
        Lesion((200.0, 152.0), 3.5),
        Lesion((165.0, 128.0), 2.5),
    )


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry and intensities of a single-slice prostate phantom.

    Centres are ``(row, col)`` pixel coordinates; sizes are in mm.  The
    defaults describe a 256x256 slice at 0.6 mm with a 5.0 x 4.5 cm gland,
    a 7 mm urethra, three 5-9 mm hypointense lesions and a 5 mm rectal wall
    between the gland and a segment-shaped endorectal coil.
    """

    rows: int = 256
    cols: int = 256
    spacing_mm: float = 0.6
    background_level: float = 100.0
    prostate_level: float = 400.0
    lesion_level: float = 250.0
    urethra_level: float = 150.0
    wall_level: float = 200.0
    prostate_center: tuple[float, float] = (186.0, 128.0)
    prostate_semi_axes_mm: tuple[float, float] = (22.5, 25.0)  # (vertical, horizontal)
    lesions: tuple[Lesion, ...] = field(default_factory=_default_lesions)
    urethra_center: tuple[float, float] | None = (186.0, 128.0)
    urethra_radius_mm: float = 3.5
    # rectal wall band: (row_start, row_stop, col_start, col_stop), half-open, pixels
    wall_box: tuple[int, int, int, int] | None = (226, 234, 78, 178)
    coil: CoilGeometry = field(default_factory=lambda: CoilGeometry(
        CoilKind.SEGMENT, (238.0, 100.0), (238.0, 156.0), 0.6))
    sigma0: float = 9.0

    def prostate_mask(self) -> np.ndarray:
        rr, cc = _grid(self)
        a_r = self.prostate_semi_axes_mm[0] / self.spacing_mm
        a_c = self.prostate_semi_axes_mm[1] / self.spacing_mm
        r0, c0 = self.prostate_center
        return ((rr - r0) / a_r) ** 2 + ((cc - c0) / a_c) ** 2 <= 1.0

    def lesion_masks(self):
        rr, cc = _grid(self)
        return [np.hypot(rr - l.center[0], cc - l.center[1]) <= l.radius_mm / self.spacing_mm
                for l in self.lesions]

    def urethra_mask(self) -> np.ndarray:
        if self.urethra_center is None:
            return np.zeros((self.rows, self.cols), dtype=bool)
        rr, cc = _grid(self)
        return (np.hypot(rr - self.urethra_center[0], cc - self.urethra_center[1])
                <= self.urethra_radius_mm / self.spacing_mm)

    def wall_mask(self) -> np.ndarray:
        mask = np.zeros((self.rows, self.cols), dtype=bool)
        if self.wall_box is not None:
            r0, r1, c0, c1 = self.wall_box
            mask[r0:r1, c0:c1] = True
        return mask


def _grid(spec):
    return np.meshgrid(np.arange(spec.rows, dtype=np.float64),
                       np.arange(spec.cols, dtype=np.float64), indexing="ij")


def validate_spec(spec: PhantomSpec) -> None:
    if spec.rows < 16 or spec.cols < 16:
        raise InvalidSpecError("phantom grid must be at least 16x16")
    if not spec.spacing_mm > 0:
        raise InvalidSpecError("spacing_mm must be > 0")
    levels = (spec.background_level, spec.prostate_level, spec.lesion_level,
              spec.urethra_level, spec.wall_level)
    if min(levels) < 0:
        raise InvalidSpecError("intensity levels must be non-negative")
    if spec.lesions and not spec.lesion_level < spec.prostate_level:
        raise InvalidSpecError("lesions must be hypointense relative to the prostate")
    if not spec.sigma0 > 0:
        raise InvalidSpecError("sigma0 must be > 0")

    rr, cc = _grid(spec)
    r0, c0 = spec.prostate_center
    a_r = spec.prostate_semi_axes_mm[0] / spec.spacing_mm
    a_c = spec.prostate_semi_axes_mm[1] / spec.spacing_mm
    if not (a_r <= r0 <= spec.rows - 1 - a_r and a_c <= c0 <= spec.cols - 1 - a_c):
        raise InvalidSpecError("prostate ellipse does not fit inside the grid")
    gland = spec.prostate_mask()
    inner = [m for m in spec.lesion_masks()]
    if spec.urethra_center is not None:
        inner.append(spec.urethra_mask())
    for i, m in enumerate(inner):
        if not m.any() or np.any(m & ~gland):
            raise InvalidSpecError("lesions and urethra must lie inside the prostate")
        for other in inner[i + 1:]:
            if np.any(m & other):
                raise InvalidSpecError("lesions and urethra must not overlap")
    if spec.wall_box is not None:
        wr0, wr1, wc0, wc1 = spec.wall_box
        if not (0 <= wr0 < wr1 <= spec.rows and 0 <= wc0 < wc1 <= spec.cols):
            raise InvalidSpecError("rectal wall band lies outside the grid")
        if np.any(spec.wall_mask() & gland):
            raise InvalidSpecError("rectal wall overlaps the prostate")
    for r, c in spec.coil.points():
        if not (0 <= r <= spec.rows - 1 and 0 <= c <= spec.cols - 1):
            raise InvalidSpecError("coil lies outside the grid")


def generate_phantom(spec: PhantomSpec) -> np.ndarray:
    """Noise-free, piecewise-constant ground-truth image."""
    validate_spec(spec)
    g = np.full((spec.rows, spec.cols), spec.background_level, dtype=np.float64)
    g[spec.wall_mask()] = spec.wall_level
    g[spec.prostate_mask()] = spec.prostate_level
    if spec.urethra_center is not None:
        g[spec.urethra_mask()] = spec.urethra_level
    for m in spec.lesion_masks():
        g[m] = spec.lesion_level
    return g


def apply_nonstationary_rician(g, scale_map, rng: np.random.Generator) -> np.ndarray:
    """Corrupt ``g`` pixelwise with Rician noise of scale ``scale_map``."""
    g = np.asarray(g, dtype=np.float64)
    phi = np.asarray(scale_map.values if isinstance(scale_map, ScaleMap) else scale_map,
                     dtype=np.float64)
    if g.shape != phi.shape:
        raise InvalidArgumentError(f"image {g.shape} and scale map {phi.shape} differ in shape")
    a = rng.standard_normal(g.shape)
    b = rng.standard_normal(g.shape)
    return np.hypot(g + phi * a, phi * b)


def _structure_mask(spec):
    mask = spec.prostate_mask() | spec.wall_mask() | spec.urethra_mask()
    for m in spec.lesion_masks():
        mask |= m
    return mask


def _dilate(mask, k):
    out = mask.copy()
    for _ in range(k):
        grown = out.copy()
        grown[1:, :] |= out[:-1, :]
        grown[:-1, :] |= out[1:, :]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        out = grown
    return out


def preset_regions(spec: PhantomSpec, margin: int = 3):
    """Background (far from the coil) and prostate rectangles for SNR/CNR.

    The background rectangle is the structure-free placement farthest from
    the coil; the prostate rectangle is the placement inside the gland, clear
    of lesions and urethra by ``margin`` pixels, closest to the gland centre.

    Returns
    -------
    (background, prostate) : pair of boolean arrays
    """
    from .profile import distance_map

    validate_spec(spec)
    gland = spec.prostate_mask()
    structures = _dilate(_structure_mask(spec), margin)

    bh, bw = max(4, spec.rows // 8), max(4, spec.cols // 4)
    dmap = distance_map(spec.coil, spec.rows, spec.cols)
    edge = np.ones_like(gland)
    edge[margin:spec.rows - margin, margin:spec.cols - margin] = False
    free = _free_placements(structures | edge, bh, bw)
    if not free.any():
        raise InvalidSpecError("no structure-free background region fits in the phantom")
    # placement whose nearest pixel is farthest from the coil; ties -> first in raster order
    nearest = np.full(free.shape, -np.inf)
    rs, cs = np.nonzero(free)
    nearest[rs, cs] = [dmap[r:r + bh, c:c + bw].min() for r, c in zip(rs, cs)]
    br, bc = np.unravel_index(np.argmax(nearest), nearest.shape)
    best = (None, br, bc)
    background = np.zeros_like(gland)
    background[best[1]:best[1] + bh, best[2]:best[2] + bw] = True

    inner = spec.urethra_mask()
    for m in spec.lesion_masks():
        inner |= m
    blocked = _dilate(inner, margin) | ~_shrink(gland, margin)
    a_r = spec.prostate_semi_axes_mm[0] / spec.spacing_mm
    ph = max(3, int(round(0.25 * a_r)))
    pw = 2 * ph
    r0, c0 = spec.prostate_center
    free = _free_placements(blocked, ph, pw)
    if not free.any():
        raise InvalidSpecError("no lesion-free prostate region fits inside the gland")
    rs, cs = np.nonzero(free)
    dist = np.hypot(rs + 0.5 * (ph - 1) - r0, cs + 0.5 * (pw - 1) - c0)
    i = int(np.argmin(dist))
    best = (None, rs[i], cs[i])
    prostate = np.zeros_like(gland)
    prostate[best[1]:best[1] + ph, best[2]:best[2] + pw] = True
    return background, prostate


def _free_placements(blocked, h, w):
    """Top-left corners where an h x w box touches no blocked pixel."""
    counts = np.zeros((blocked.shape[0] + 1, blocked.shape[1] + 1), dtype=np.int64)
    counts[1:, 1:] = np.cumsum(np.cumsum(blocked, axis=0), axis=1)
    box = counts[h:, w:] - counts[:-h, w:] - counts[h:, :-w] + counts[:-h, :-w]
    return box == 0


def _shrink(mask, k):
    return ~_dilate(~mask, k)
