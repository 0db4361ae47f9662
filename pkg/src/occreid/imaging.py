"""Raster image primitives.

8-bit row-major images with a binary PPM (P6) / PGM (P5) codec, crop,
bilinear resize, paste and the jittered center-crop used for training
augmentation. Storage is uint8; compute happens on float64 views and is
written back with round-half-away-from-zero, clamped to [0, 255]. All
operations are pure: inputs are never mutated and identical inputs
(including generator state) produce bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CorruptData,
    InsufficientSize,
    OutOfBounds,
    ShapeMismatch,
    UnsupportedFormat,
)
from .rng import SplitMix64

_WHITESPACE = (0x20, 0x09, 0x0A, 0x0B, 0x0C, 0x0D)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned pixel rectangle; origin is the image's top-left corner."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError(f"rect sides must be >= 1, got {self.w}x{self.h}")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"rect origin must be >= 0, got ({self.x}, {self.y})")

    @property
    def area(self) -> int:
        return self.w * self.h

    def fits_in(self, width: int, height: int) -> bool:
        return self.x + self.w <= width and self.y + self.h <= height


class Image:
    """Immutable 8-bit raster, pixels shaped (height, width, channels).

    channels is 3 for color and 1 for masks/saliency. A 2-d array is
    accepted and treated as single-channel.
    """

    __slots__ = ("pixels",)

    def __init__(self, pixels):
        arr = np.asarray(pixels)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ShapeMismatch(f"expected 2-d or 3-d pixel array, got ndim={arr.ndim}")
        if arr.dtype != np.uint8:
            if arr.dtype.kind not in "iu":
                raise TypeError(f"pixel dtype must be integer, got {arr.dtype}; use Image.from_float")
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise ValueError("integer pixel values must lie in [0, 255]")
        h, w, c = arr.shape
        if w < 1 or h < 1:
            raise ShapeMismatch(f"image dims must be >= 1, got {w}x{h}")
        if c not in (1, 3):
            raise ShapeMismatch(f"channel count must be 1 or 3, got {c}")
        arr = np.array(arr, dtype=np.uint8, copy=True, order="C")
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Image is immutable")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def to_float(self) -> np.ndarray:
        """Unit-interval float64 view (a fresh array) of the pixel data."""
        return self.pixels.astype(np.float64) / 255.0

    @classmethod
    def from_float(cls, values: np.ndarray) -> "Image":
        """Build from unit-interval reals; round half away from zero, clamp."""
        arr = np.asarray(values, dtype=np.float64)
        stored = np.clip(np.floor(arr * 255.0 + 0.5), 0.0, 255.0)
        return cls(stored.astype(np.uint8))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Image):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(
            self.pixels, other.pixels
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"Image({self.width}x{self.height}x{self.channels})"


def _next_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        c = data[pos]
        if c in _WHITESPACE:
            pos += 1
        elif c == 0x23:  # '#' comment runs to end of line
            while pos < n and data[pos] != 0x0A:
                pos += 1
        else:
            break
    start = pos
    while pos < n and data[pos] not in _WHITESPACE:
        pos += 1
    if start == pos:
        raise CorruptData("truncated header")
    return data[start:pos], pos


def load_image(path) -> Image:
    """Decode a binary PPM (P6, 3 channels) or PGM (P5, 1 channel) file.

    Raises FileNotFoundError, UnsupportedFormat for other magics or 16-bit
    samples, CorruptData for malformed headers or short payloads.
    """
    data = Path(path).read_bytes()
    magic, pos = _next_token(data, 0)
    if magic == b"P6":
        channels = 3
    elif magic == b"P5":
        channels = 1
    else:
        raise UnsupportedFormat(f"{path}: unsupported magic {magic!r}, expected P5 or P6")
    fields = []
    for _ in range(3):
        tok, pos = _next_token(data, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise CorruptData(f"{path}: non-integer header field {tok!r}") from None
    width, height, maxval = fields
    if width < 1 or height < 1 or maxval < 1:
        raise CorruptData(f"{path}: bad dimensions {width}x{height} maxval={maxval}")
    if maxval > 255:
        raise UnsupportedFormat(f"{path}: 16-bit samples (maxval={maxval}) not supported")
    pos += 1  # single whitespace byte separates header from payload
    expected = width * height * channels
    payload = data[pos : pos + expected]
    if len(payload) < expected:
        raise CorruptData(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return Image(arr)


def save_image(img: Image, path) -> None:
    """Write as P6 (3 channels) or P5 (1 channel), maxval 255, bit-exact."""
    magic = b"P6" if img.channels == 3 else b"P5"
    header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
    Path(path).write_bytes(header + img.pixels.tobytes())


def crop(img: Image, r: Rect) -> Image:
    """Sub-image covering r; output pixel (u, v) equals input (r.x+u, r.y+v)."""
    if not r.fits_in(img.width, img.height):
        raise OutOfBounds(
            f"rect {r} outside {img.width}x{img.height} image"
        )
    return Image(img.pixels[r.y : r.y + r.h, r.x : r.x + r.w].copy())


def paste(base: Image, patch: Image, x: int, y: int) -> Image:
    """New image equal to base with patch written at (x, y); base untouched."""
    if patch.channels != base.channels:
        raise ShapeMismatch(
            f"patch has {patch.channels} channels, base has {base.channels}"
        )
    if x < 0 or y < 0 or x + patch.width > base.width or y + patch.height > base.height:
        raise OutOfBounds(
            f"{patch.width}x{patch.height} patch at ({x}, {y}) outside "
            f"{base.width}x{base.height} image"
        )
    out = base.pixels.copy()
    out[y : y + patch.height, x : x + patch.width] = patch.pixels
    return Image(out)


def bilinear_resize_array(values: np.ndarray, w: int, h: int) -> np.ndarray:
    """Bilinear resample of a float array (h, w) or (h, w, c) to h rows, w cols.

    Sample positions follow the half-pixel convention
    src = (dst + 0.5) * in/out - 0.5 with neighbours clamped to the edge,
    so resizing to identical dims is exact.
    """
    if w < 1 or h < 1:
        raise ValueError(f"target dims must be >= 1, got {w}x{h}")
    arr = np.asarray(values, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    in_h, in_w = arr.shape[:2]
    sx = (np.arange(w) + 0.5) * (in_w / w) - 0.5
    sy = (np.arange(h) + 0.5) * (in_h / h) - 0.5
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x1 = np.clip(x0 + 1, 0, in_w - 1)
    y1 = np.clip(y0 + 1, 0, in_h - 1)
    x0 = np.clip(x0, 0, in_w - 1)
    y0 = np.clip(y0, 0, in_h - 1)
    top = arr[np.ix_(y0, x0)] * (1.0 - fx)[None, :, None] + arr[np.ix_(y0, x1)] * fx[None, :, None]
    bot = arr[np.ix_(y1, x0)] * (1.0 - fx)[None, :, None] + arr[np.ix_(y1, x1)] * fx[None, :, None]
    out = top * (1.0 - fy)[:, None, None] + bot * fy[:, None, None]
    return out[:, :, 0] if squeeze else out


def resize(img: Image, w: int, h: int) -> Image:
    """Bilinear resize with edge clamping; value range [0, 255] is preserved."""
    out = bilinear_resize_array(img.pixels.astype(np.float64), w, h)
    return Image(np.clip(np.floor(out + 0.5), 0.0, 255.0).astype(np.uint8))


def jittered_center_crop(
    img: Image, side: int, max_jitter: int, rng: SplitMix64 | None = None
) -> Image:
    """Square side-by-side crop around the center, perturbed by up to max_jitter.

    Both offsets are independent uniform integers in [-max_jitter, +max_jitter],
    drawn x first then y. The caller is expected to have resized the image so
    that side + 2 * max_jitter fits within both dims.
    """
    if side < 1 or max_jitter < 0:
        raise ValueError(f"side must be >= 1 and max_jitter >= 0, got {side}, {max_jitter}")
    if side + 2 * max_jitter > min(img.width, img.height):
        raise InsufficientSize(
            f"side {side} with jitter {max_jitter} needs {side + 2 * max_jitter} px, "
            f"image is {img.width}x{img.height}"
        )
    if max_jitter > 0 and rng is None:
        raise ValueError("max_jitter > 0 requires a generator")
    cx = (img.width - side) // 2
    cy = (img.height - side) // 2
    if max_jitter > 0:
        cx += rng.randint(-max_jitter, max_jitter)
        cy += rng.randint(-max_jitter, max_jitter)
    return crop(img, Rect(cx, cy, side, side))
