"""Minimal Netpbm image I/O for projection artifacts.

Raw line-integral images travel as 16-bit big-endian P5 PGM plus a JSON
sidecar (same filename + ".json") declaring the scale factor that maps stored
integers back to integral values: stored = round(value * scale). Display
images are 8-bit P5, overlays 24-bit P6 PPM, binary masks 8-bit P5 with
foreground 255.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

PGM16_MAX = 65535


def _read_tokens(fh, n):
    """Next n whitespace-separated header tokens, '#' comments skipped."""
    toks = []
    while len(toks) < n:
        line = fh.readline()
        if not line:
            raise ValueError("truncated Netpbm header")
        hash_at = line.find(b"#")
        if hash_at >= 0:
            line = line[:hash_at]
        toks.extend(line.split())
    return toks


def _write_pnm(path, magic: bytes, arr: np.ndarray, maxval: int):
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n%d\n" % (w, h, maxval))
        fh.write(arr.tobytes())


def write_pgm8(path, arr: np.ndarray):
    arr = np.asarray(arr)
    if arr.dtype != np.uint8 or arr.ndim != 2:
        raise ValueError("8-bit PGM needs a 2D uint8 array")
    _write_pnm(path, b"P5", arr, 255)


def write_ppm(path, rgb: np.ndarray):
    rgb = np.asarray(rgb)
    if rgb.dtype != np.uint8 or rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("PPM needs an (h, w, 3) uint8 array")
    _write_pnm(path, b"P6", rgb, 255)


def write_pgm16_scaled(path, values: np.ndarray) -> float:
    """Store a non-negative float image as 16-bit PGM plus a scale sidecar.

    The scale maps the image maximum to the full 16-bit range; an all-zero
    image records scale 1.0. Returns the scale used.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or (values < 0).any() or not np.isfinite(values).all():
        raise ValueError("need a finite non-negative 2D image")
    peak = float(values.max())
    scale = PGM16_MAX / peak if peak > 0 else 1.0
    stored = np.round(values * scale).astype(">u2")
    _write_pnm(path, b"P5", stored, PGM16_MAX)
    Path(str(path) + ".json").write_text(json.dumps({"scale": scale}) + "\n")
    return scale


def read_pgm(path) -> np.ndarray:
    """Raw P5 reader; returns uint8 or uint16 (native order) by maxval."""
    with open(path, "rb") as fh:
        magic = fh.readline().split()
        if not magic or magic[0] != b"P5":
            raise ValueError(f"{path}: not a raw PGM file")
        w, h, maxval = (int(t) for t in _read_tokens(fh, 3))
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        data = fh.read(w * h * dtype.itemsize)
    if len(data) != w * h * dtype.itemsize:
        raise ValueError(f"{path}: truncated pixel data")
    arr = np.frombuffer(data, dtype=dtype).reshape(h, w)
    return arr.astype(np.uint16) if maxval > 255 else arr.copy()


def read_pgm16_scaled(path) -> np.ndarray:
    """Inverse of write_pgm16_scaled: stored integers back to float values."""
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    return (read_pgm(path).astype(np.float32) / float(sidecar["scale"])).astype(np.float32)


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().split()
        if not magic or magic[0] != b"P6":
            raise ValueError(f"{path}: not a raw PPM file")
        w, h, maxval = (int(t) for t in _read_tokens(fh, 3))
        if maxval != 255:
            raise ValueError("only 8-bit PPM supported")
        data = fh.read(w * h * 3)
    if len(data) != w * h * 3:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).copy()


def write_mask_pgm(path, mask: np.ndarray):
    """Binary mask as 8-bit PGM, foreground white."""
    mask = np.asarray(mask)
    if np.setdiff1d(np.unique(mask), [0, 1]).size:
        raise ValueError("mask must be 0/1")
    write_pgm8(path, (mask * 255).astype(np.uint8))


def read_mask_pgm(path) -> np.ndarray:
    return (read_pgm(path) > 127).astype(np.uint8)
