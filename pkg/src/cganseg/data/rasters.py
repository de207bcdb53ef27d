"""Grayscale raster I/O: binary PGM (P5, 8/16-bit) natively, PNG through Pillow."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

PathLike = Union[str, os.PathLike]

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*([^\s#]+)")


class RasterError(ValueError):
    pass


@dataclass(frozen=True)
class Raster:
    """Integer pixels ``[H, W]`` with their full-scale value (255 or 65535 typically)."""

    pixels: np.ndarray
    maxval: int

    def __post_init__(self):
        if self.pixels.ndim != 2 or 0 in self.pixels.shape:
            raise RasterError(f"raster must be a non-empty 2-d array, got {self.pixels.shape}")
        if not np.issubdtype(self.pixels.dtype, np.integer):
            raise RasterError("raster pixels must be integers")
        if not 0 < self.maxval < 65536:
            raise RasterError(f"maxval must lie in [1, 65535], got {self.maxval}")

    @property
    def bit_depth(self) -> int:
        return 8 if self.maxval < 256 else 16

    @classmethod
    def from_unit(cls, values: np.ndarray, bits: int = 8) -> "Raster":
        """Quantize floats in [0, 1] to an integer raster."""
        maxval = 255 if bits == 8 else 65535
        dtype = np.uint8 if bits == 8 else np.uint16
        q = np.rint(np.clip(values, 0.0, 1.0) * maxval).astype(dtype)
        return cls(q, maxval)


def decode_pgm(buf: bytes, source: str = "<bytes>") -> Raster:
    if not buf.startswith(b"P5"):
        raise RasterError(f"{source}: not a binary PGM (P5) file")
    pos = 2
    fields = []
    for _ in range(3):
        m = _TOKEN.match(buf, pos)
        if m is None or not m.group(1).isdigit():
            raise RasterError(f"{source}: malformed PGM header")
        fields.append(int(m.group(1)))
        pos = m.end()
    width, height, maxval = fields
    if width == 0 or height == 0:
        raise RasterError(f"{source}: zero-extent image")
    if not 0 < maxval < 65536:
        raise RasterError(f"{source}: PGM maxval {maxval} out of range")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise RasterError(f"{source}: missing whitespace before PGM pixel data")
    pos += 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    if len(buf) - pos < need:
        raise RasterError(f"{source}: PGM pixel data truncated")
    pixels = np.frombuffer(buf, dtype=dtype, count=width * height, offset=pos)
    pixels = pixels.reshape(height, width).astype(np.uint16 if maxval > 255 else np.uint8)
    if pixels.max() > maxval:
        raise RasterError(f"{source}: pixel value exceeds maxval {maxval}")
    return Raster(pixels, maxval)


def encode_pgm(raster: Raster) -> bytes:
    h, w = raster.pixels.shape
    header = f"P5\n{w} {h}\n{raster.maxval}\n".encode("ascii")
    dtype = ">u2" if raster.maxval > 255 else "u1"
    return header + raster.pixels.astype(dtype).tobytes()


def _decode_png(buf: bytes, source: str) -> Raster:
    import io

    from PIL import Image

    try:
        img = Image.open(io.BytesIO(buf))
        img.load()
    except Exception as exc:  # Pillow raises a zoo of exception types
        raise RasterError(f"{source}: unreadable PNG ({exc})") from None
    if img.mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(img, dtype=np.int64)
        return Raster(np.clip(arr, 0, 65535).astype(np.uint16), 65535)
    if img.mode != "L":
        raise RasterError(f"{source}: PNG must be single-channel grayscale, got mode {img.mode}")
    return Raster(np.asarray(img, dtype=np.uint8), 255)


def read_raster(path: PathLike) -> Raster:
    p = Path(path)
    try:
        buf = p.read_bytes()
    except OSError as exc:
        raise RasterError(f"{p}: cannot read ({exc.strerror})") from None
    if buf.startswith(PNG_SIGNATURE):
        return _decode_png(buf, str(p))
    return decode_pgm(buf, str(p))


def write_raster(path: PathLike, raster: Raster) -> None:
    p = Path(path)
    if p.suffix.lower() == ".png":
        from PIL import Image

        img = Image.fromarray(raster.pixels.astype(np.uint8 if raster.maxval <= 255 else np.uint16))
        img.save(p, format="PNG")
    else:
        p.write_bytes(encode_pgm(raster))
