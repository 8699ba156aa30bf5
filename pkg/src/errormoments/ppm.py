"""Binary PPM (P6) image reading and writing.

Deliberately minimal: 8-bit P6 with maxval 255 only, no image library
required, which is all the image demo needs. Pixel values map to the unit
interval by dividing by 255 and are clamped back on write.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = ["read_ppm", "write_ppm", "to_unit", "from_unit"]


def _read_header_token(data: bytes, pos: int) -> tuple[bytes, int]:
    """Next whitespace-delimited token, skipping '#' comments to end of line."""
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ValueError("truncated PPM header")
    return data[start:pos], pos


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    """Read a binary P6 image as a height x width x 3 uint8 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        magic, pos = _read_header_token(data, 0)
        if magic != b"P6":
            raise ValueError(
                f"unsupported image format {magic.decode('ascii', 'replace')!r}; "
                "only binary PPM (P6) is supported"
            )
        width_tok, pos = _read_header_token(data, pos)
        height_tok, pos = _read_header_token(data, pos)
        maxval_tok, pos = _read_header_token(data, pos)
        width, height, maxval = int(width_tok), int(height_tok), int(maxval_tok)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from exc
    if width < 1 or height < 1:
        raise ValueError(f"{path}: bad PPM dimensions {width}x{height}")
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace byte separates header from raster
    expected = width * height * 3
    raster = data[pos : pos + expected]
    if len(raster) != expected:
        raise ValueError(
            f"{path}: raster has {len(raster)} bytes, expected {expected}"
        )
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3).copy()


def write_ppm(path: str | os.PathLike, image: np.ndarray) -> None:
    """Write a height x width x 3 uint8 array as binary P6."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise ValueError(
            f"image must be height x width x 3 uint8, got shape {arr.shape} "
            f"dtype {arr.dtype}"
        )
    height, width = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(arr).tobytes())


def to_unit(image: np.ndarray) -> np.ndarray:
    """Map 8-bit pixel values to floats in [0, 1]."""
    return np.asarray(image, dtype=np.float64) / 255.0


def from_unit(values: np.ndarray) -> np.ndarray:
    """Map unit-interval floats back to 8-bit pixels, clamping out-of-range."""
    clipped = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.rint(clipped * 255.0).astype(np.uint8)
