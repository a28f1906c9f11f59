"""Image and mask files.

Two image containers are supported:

* binary PGM (``P5``), 16-bit big-endian, ``maxval`` 65535.  Float
  intensities are stored as ``round(x / scale)`` with the scale factor kept
  in a ``# scale=<float>`` header comment, so the quantisation error is at
  most ``scale / 2``.
* raw little-endian float32 with a one-line ASCII header
  ``"rows cols spacing_mm\\n"``.

Masks are 8-bit PGM (``maxval`` 255); any nonzero sample is ``True``.
Reading sniffs the ``P5`` magic; writing picks the container from the file
extension (``.pgm`` or anything else for raw).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, ParseError

PGM_MAXVAL = 65535
MASK_MAXVAL = 255
# refuse headers describing more samples than this (1 GiB of float32)
MAX_PIXELS = 1 << 28

_COMMENT_KEY = re.compile(rb"#\s*(\w+)\s*=\s*(\S+)")


@dataclass(frozen=True)
class _PgmHeader:
    width: int
    height: int
    maxval: int
    maxval_offset: int
    data_offset: int
    comments: dict


@dataclass
class ImageData:
    """Pixels plus the pixel spacing when the file records it."""

    pixels: np.ndarray
    spacing_mm: float | None = None


# --------------------------------------------------------------------------
# PGM header parsing
# --------------------------------------------------------------------------

def _parse_pgm_header(data: bytes) -> _PgmHeader:
    """Parse a ``P5`` header.

    Comments may appear between any two header tokens; ``key=value`` comments
    are collected with the byte offset at which each starts.
    """
    if len(data) < 2 or data[:2] != b"P5":
        raise ParseError("not a binary PGM: missing 'P5' magic", 0)
    pos = 2
    tokens = []
    comments = {}
    while len(tokens) < 3:
        if pos >= len(data):
            raise ParseError("PGM header ends early", pos)
        ch = data[pos:pos + 1]
        if ch in b" \t\r\n\x0b\x0c":
            pos += 1
        elif ch == b"#":
            end = data.find(b"\n", pos)
            end = len(data) if end < 0 else end
            m = _COMMENT_KEY.match(data, pos, end)
            if m:
                comments[m.group(1).decode("ascii")] = (m.group(2).decode("ascii"), pos)
            pos = end
        elif ch.isdigit():
            start = pos
            while pos < len(data) and data[pos:pos + 1].isdigit():
                pos += 1
            tokens.append((int(data[start:pos]), start))
        else:
            raise ParseError(f"unexpected byte {ch!r} in PGM header", pos)
    # exactly one whitespace byte separates maxval from the raster
    if pos >= len(data) or data[pos:pos + 1] not in b" \t\r\n\x0b\x0c":
        raise ParseError("missing whitespace after maxval", pos)
    pos += 1
    (width, w_at), (height, h_at), (maxval, m_at) = tokens
    if width < 1:
        raise ParseError("PGM width must be positive", w_at)
    if height < 1:
        raise ParseError("PGM height must be positive", h_at)
    if not 1 <= maxval <= PGM_MAXVAL:
        raise ParseError(f"PGM maxval {maxval} outside 1..65535", m_at)
    if width * height > MAX_PIXELS:
        raise InvalidArgumentError(f"PGM dimensions {height}x{width} exceed {MAX_PIXELS} pixels")
    return _PgmHeader(width, height, maxval, m_at, pos, comments)


def _read_pgm_samples(data: bytes):
    h = _parse_pgm_header(data)
    width, height, maxval, offset = h.width, h.height, h.maxval, h.data_offset
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    if len(data) - offset < need:
        raise ParseError(
            f"PGM raster truncated: need {need} bytes, found {len(data) - offset}",
            len(data))
    samples = np.frombuffer(data, dtype=dtype, count=width * height, offset=offset)
    samples = samples.reshape(height, width)
    if np.any(samples > maxval):
        bad = int(np.argmax(samples.ravel() > maxval))
        raise ParseError(f"sample exceeds maxval {maxval}", offset + bad * dtype.itemsize)
    return samples, h


def _comment_float(comments, key, default=None):
    if key not in comments:
        return default
    text, at = comments[key]
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"malformed '{key}' comment {text!r}", at) from None
    if not (math.isfinite(value) and value > 0):
        raise ParseError(f"'{key}' comment must be a positive number", at)
    return value


# --------------------------------------------------------------------------
# images
# --------------------------------------------------------------------------

def _read_raw(data: bytes) -> ImageData:
    nl = data.find(b"\n")
    if nl < 0:
        raise ParseError("raw image header has no terminating newline", len(data))
    fields = data[:nl].split()
    if len(fields) != 3:
        raise ParseError("raw image header must be 'rows cols spacing_mm'", 0)
    try:
        rows, cols = int(fields[0]), int(fields[1])
        spacing = float(fields[2])
    except ValueError:
        raise ParseError("raw image header must be 'rows cols spacing_mm'", 0) from None
    if rows < 1 or cols < 1:
        raise ParseError("raw image dimensions must be positive", 0)
    if not (math.isfinite(spacing) and spacing > 0):
        raise ParseError("raw image spacing must be a positive number", 0)
    if rows * cols > MAX_PIXELS:
        raise InvalidArgumentError(f"raw dimensions {rows}x{cols} exceed {MAX_PIXELS} pixels")
    need = rows * cols * 4
    if len(data) - nl - 1 != need:
        raise ParseError(
            f"raw image body must hold {need} bytes, found {len(data) - nl - 1}",
            min(len(data), nl + 1 + need))
    pixels = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=nl + 1)
    return ImageData(pixels.reshape(rows, cols).astype(np.float64), spacing)


def read_image(path) -> ImageData:
    """Load an image from a 16-bit PGM or a raw float32 file."""
    data = Path(path).read_bytes()
    if data[:2] == b"P5":
        samples, header = _read_pgm_samples(data)
        scale = _comment_float(header.comments, "scale", 1.0)
        spacing = _comment_float(header.comments, "spacing_mm")
        return ImageData(samples.astype(np.float64) * scale, spacing)
    return _read_raw(data)


def _check_image(pixels):
    img = np.asarray(pixels, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise InvalidArgumentError("image must be a non-empty 2-D array")
    if not np.all(np.isfinite(img)):
        raise InvalidArgumentError("image contains non-finite values")
    return img


def write_pgm(path, pixels, spacing_mm: float | None = None, scale: float | None = None):
    """Write a 16-bit PGM; ``scale`` defaults to ``max / 65535``."""
    img = _check_image(pixels)
    if np.any(img < 0):
        raise InvalidArgumentError("PGM stores non-negative intensities only")
    peak = float(img.max())
    if scale is None:
        scale = peak / PGM_MAXVAL if peak > 0 else 1.0
    if not scale > 0:
        raise InvalidArgumentError("scale must be > 0")
    q = np.rint(img / scale)
    if q.max() > PGM_MAXVAL:
        raise InvalidArgumentError(f"scale {scale} is too small for peak intensity {peak}")
    header = f"P5\n# scale={scale!r}\n"
    if spacing_mm is not None:
        header += f"# spacing_mm={float(spacing_mm)!r}\n"
    header += f"{img.shape[1]} {img.shape[0]}\n{PGM_MAXVAL}\n"
    Path(path).write_bytes(header.encode("ascii") + q.astype(">u2").tobytes())


def write_raw(path, pixels, spacing_mm: float = 1.0):
    img = _check_image(pixels)
    if not (spacing_mm > 0 and math.isfinite(spacing_mm)):
        raise InvalidArgumentError("spacing_mm must be a positive number")
    header = f"{img.shape[0]} {img.shape[1]} {float(spacing_mm)!r}\n".encode("ascii")
    Path(path).write_bytes(header + img.astype("<f4").tobytes())


def write_image(path, pixels, spacing_mm: float | None = None):
    """Write ``pixels``: 16-bit PGM for a ``.pgm`` suffix, raw float32 otherwise."""
    if Path(path).suffix.lower() == ".pgm":
        write_pgm(path, pixels, spacing_mm)
    else:
        write_raw(path, pixels, 1.0 if spacing_mm is None else spacing_mm)


# --------------------------------------------------------------------------
# masks
# --------------------------------------------------------------------------

def read_mask(path) -> np.ndarray:
    """Load an 8-bit PGM mask (``maxval`` must be 255)."""
    data = Path(path).read_bytes()
    header = _parse_pgm_header(data)
    if header.maxval != MASK_MAXVAL:
        raise ParseError(f"mask PGM must have maxval 255, got {header.maxval}",
                         header.maxval_offset)
    samples, _ = _read_pgm_samples(data)
    return samples != 0


def write_mask(path, mask):
    m = np.asarray(mask)
    if m.ndim != 2 or m.size == 0:
        raise InvalidArgumentError("mask must be a non-empty 2-D array")
    body = np.where(m.astype(bool), MASK_MAXVAL, 0).astype(np.uint8)
    header = f"P5\n{m.shape[1]} {m.shape[0]}\n{MASK_MAXVAL}\n".encode("ascii")
    Path(path).write_bytes(header + body.tobytes())
