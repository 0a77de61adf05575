"""Binary PGM (P5) / PBM (P4) serialization for plane dumps and golden files.

Byte layout is fixed so dumps are diffable:

  PGM: b"P5\\n<width> <height>\\n255\\n" + height*width raw bytes, row-major.
       Saturating analog planes are written offset by +128 (so the full
       [-128, 127] range maps to 0..255 losslessly); ideal planes are
       clamped to [0, 255] and written as-is.
  PBM: b"P4\\n<width> <height>\\n" + rows packed MSB-first, each row padded
       to a whole byte. A 1 bit in the plane is written as a 1 bit.
"""

from __future__ import annotations

import numpy as np

from .geometry import PlaneGeometry
from .planes import SATURATING, AnalogPlane, DigitalPlane


class PnmError(ValueError):
    pass


def _read_tokens(data: bytes, n: int, start: int) -> tuple[list[bytes], int]:
    """Read n whitespace-separated header tokens, skipping # comments."""
    tokens: list[bytes] = []
    i = start
    while len(tokens) < n:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if i >= len(data):
            raise PnmError("truncated header")
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        tokens.append(data[i:j])
        i = j
    return tokens, i


def encode_pgm(plane: AnalogPlane) -> bytes:
    vals = plane.values
    if plane.mode == SATURATING:
        vals = vals + 128
    vals = np.clip(vals, 0, 255).astype(np.uint8)
    h, w = plane.geometry.shape
    return b"P5\n%d %d\n255\n" % (w, h) + vals.tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    """Raw 8-bit grayscale image from a binary PGM. Returns uint8 H x W."""
    (magic,), i = _read_tokens(data, 1, 0)
    if magic != b"P5":
        raise PnmError(f"not a binary PGM (magic {magic!r})")
    (ws, hs, ms), i = _read_tokens(data, 3, i)
    w, h, maxval = int(ws), int(hs), int(ms)
    if maxval != 255:
        raise PnmError(f"unsupported maxval {maxval}, expected 255")
    i += 1  # single whitespace byte after maxval
    raster = data[i:i + w * h]
    if len(raster) != w * h:
        raise PnmError("truncated PGM raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy()


def decode_pgm_plane(data: bytes, geometry: PlaneGeometry, mode: str) -> AnalogPlane:
    img = decode_pgm(data).astype(np.int64)
    if img.shape != geometry.shape:
        raise PnmError(f"PGM shape {img.shape} != geometry {geometry.shape}")
    if mode == SATURATING:
        img = img - 128
    return AnalogPlane(geometry, img, mode)


def encode_pbm(plane: DigitalPlane) -> bytes:
    h, w = plane.geometry.shape
    packed = np.packbits(plane.bits, axis=1)
    return b"P4\n%d %d\n" % (w, h) + packed.tobytes()


def decode_pbm(data: bytes) -> np.ndarray:
    """Bit image from a binary PBM. Returns uint8 H x W of {0,1}."""
    (magic,), i = _read_tokens(data, 1, 0)
    if magic != b"P4":
        raise PnmError(f"not a binary PBM (magic {magic!r})")
    (ws, hs), i = _read_tokens(data, 2, i)
    w, h = int(ws), int(hs)
    i += 1
    row_bytes = (w + 7) // 8
    raster = data[i:i + row_bytes * h]
    if len(raster) != row_bytes * h:
        raise PnmError("truncated PBM raster")
    rows = np.frombuffer(raster, dtype=np.uint8).reshape(h, row_bytes)
    return np.unpackbits(rows, axis=1)[:, :w].copy()


def decode_pbm_plane(data: bytes, geometry: PlaneGeometry) -> DigitalPlane:
    bits = decode_pbm(data)
    if bits.shape != geometry.shape:
        raise PnmError(f"PBM shape {bits.shape} != geometry {geometry.shape}")
    return DigitalPlane(geometry, bits)


def write_pgm(path, plane: AnalogPlane):
    with open(path, "wb") as f:
        f.write(encode_pgm(plane))


def write_pbm(path, plane: DigitalPlane):
    with open(path, "wb") as f:
        f.write(encode_pbm(plane))


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_pgm(f.read())


def write_gray_pgm(path, img: np.ndarray):
    """Write a plain uint8 image (e.g. a 64x64 binary sample scaled to 0/255)."""
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim != 2:
        raise PnmError("expected a 2-D grayscale image")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h) + img.tobytes())
