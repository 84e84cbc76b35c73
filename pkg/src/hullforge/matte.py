"""Soft foreground mattes and their 8-bit PGM interchange format."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class MatteFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SoftMatte:
    """Foreground probability image, ``values[row, col]`` in ``[0, 1]``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.size == 0:
            raise ValueError("matte values must be a non-empty 2-D array")
        if not np.all((v >= 0.0) & (v <= 1.0)):
            raise ValueError("matte values must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def height(self):
        return self.values.shape[0]


def bilinear_sample(values, x, y):
    """Bilinear lookup of ``values[row, col]`` at (possibly fractional) ``x``/``y`` arrays.

    Samples outside ``[0, W-1] x [0, H-1]`` (or NaN) are 0.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    h, w = values.shape
    inside = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xs = np.where(inside, x, 0.0)
    ys = np.where(inside, y, 0.0)
    x0 = np.minimum(np.floor(xs).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(ys).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    top = values[y0, x0] * (1 - fx) + values[y0, x1] * fx
    bot = values[y1, x0] * (1 - fx) + values[y1, x1] * fx
    out = top * (1 - fy) + bot * fy
    return np.where(inside, out, 0.0)


def sample_matte(m, x, y):
    """Foreground probability of ``m`` at sub-pixel position ``(x, y)``."""
    return float(bilinear_sample(m.values, x, y))


def save_matte(m, path):
    q = np.round(m.values * 255.0).astype(np.uint8)
    header = f"P5\n{m.width} {m.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + q.tobytes())


def _pgm_tokens(data):
    """Yield (token, end_offset) for the three header fields after the magic."""
    pos = 2
    tokens = []
    n = len(data)
    while len(tokens) < 3:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise MatteFormatError("truncated PGM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    return tokens, pos + 1


def load_matte(path):
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise MatteFormatError(f"{path}: wrong magic number {data[:2]!r}, expected b'P5'")
    tokens, offset = _pgm_tokens(data)
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError:
        raise MatteFormatError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise MatteFormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    if w <= 0 or h <= 0:
        raise MatteFormatError(f"{path}: non-positive dimensions {w}x{h}")
    payload = data[offset : offset + w * h]
    if len(payload) < w * h:
        raise MatteFormatError(f"{path}: truncated payload ({len(payload)} of {w * h} bytes)")
    px = np.frombuffer(payload, dtype=np.uint8).reshape(h, w)
    return SoftMatte(px.astype(np.float64) / 255.0)


def matte_filename(frame, camera_id):
    return f"{frame}_{camera_id}.pgm"
