"""Activation-map refinement against projected lung masks, plus overlays.

An activation map is an h×w×c non-negative saliency stack for one (patient,
view). Refinement multiplies every channel elementwise by a binary lung mask
aligned to the map's spatial grid, so activation outside the lung is exactly
zeroed. Overlays blend the channel-reduced map onto the display image with a
fixed piecewise-linear blue→red colormap at alpha 0.4.

Interchange format: one JSON header line {h, w, c, patient_id,
view_angle_deg} terminated by a newline, followed by the row-major
little-endian float32 payload.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .projection import _resize_bilinear


@dataclass
class ActivationMap:
    values: np.ndarray            # (h, w, c)
    patient_id: str = ""
    view_angle_deg: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise ValueError("activation map must be h×w×c with positive dims")
        if not np.isfinite(self.values).all():
            raise ValueError("activation map must be finite")

    @property
    def h(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]

    @property
    def c(self) -> int:
        return self.values.shape[2]


@dataclass
class FeatureMask:
    pixels: np.ndarray            # (h, w) of {0,1}

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 2 or min(self.pixels.shape) < 1:
            raise ValueError("feature mask must be 2D with positive dims")
        if np.setdiff1d(np.unique(self.pixels), [0, 1]).size:
            raise ValueError("feature mask must be 0/1")
        self.pixels = self.pixels.astype(np.uint8)

    @property
    def h(self) -> int:
        return self.pixels.shape[0]

    @property
    def w(self) -> int:
        return self.pixels.shape[1]


def align_mask(mask, h: int, w: int) -> FeatureMask:
    """Nearest-neighbor resize of a detector-resolution binary mask to h×w."""
    if h < 1 or w < 1:
        raise ValueError("target dims must be positive")
    m = np.asarray(getattr(mask, "pixels", mask))
    if m.ndim != 2 or min(m.shape) < 1:
        raise ValueError("mask must be a non-empty 2D array")
    sh, sw = m.shape
    rows = np.minimum(((np.arange(h) + 0.5) * sh / h).astype(np.intp), sh - 1)
    cols = np.minimum(((np.arange(w) + 0.5) * sw / w).astype(np.intp), sw - 1)
    return FeatureMask(m[np.ix_(rows, cols)])


def refine(a: ActivationMap, m: FeatureMask) -> ActivationMap:
    """Zero all activation outside the mask: out[y,x,k] = a[y,x,k]·m[y,x]."""
    if (a.h, a.w) != (m.h, m.w):
        raise ValueError(f"spatial dims differ: map {(a.h, a.w)} vs mask {(m.h, m.w)}")
    return ActivationMap(a.values * m.pixels[:, :, None].astype(np.float32),
                         a.patient_id, a.view_angle_deg)


def reduce_channels(a: ActivationMap, how: str = "mean") -> np.ndarray:
    if how == "mean":
        return a.values.mean(axis=2)
    if how == "max":
        return a.values.max(axis=2)
    raise ValueError(f"unknown channel reduction {how!r}")


def _colormap(x: np.ndarray) -> np.ndarray:
    """Piecewise-linear blue→cyan→yellow→red map on [0,1], returned as float."""
    r = np.clip(1.5 - np.abs(4.0 * x - 3.0), 0.0, 1.0)
    g = np.clip(1.5 - np.abs(4.0 * x - 2.0), 0.0, 1.0)
    b = np.clip(1.5 - np.abs(4.0 * x - 1.0), 0.0, 1.0)
    return np.stack([r, g, b], axis=-1)


def render_overlay(a: ActivationMap, base: np.ndarray, channel_reduce: str = "mean",
                   mask: np.ndarray | None = None, alpha: float = 0.4) -> np.ndarray:
    """Blend the reduced activation onto an 8-bit grayscale display image.

    The map is bilinearly upscaled to the base resolution; pixels with zero
    upscaled activation show the base unchanged. When a display-resolution
    binary ``mask`` is given, color is confined to it, which keeps the
    bilinear ramp from bleeding past a refined map's support. Normalization
    is min–max over the colored pixels; a single-valued support renders at
    full scale.
    """
    base = np.asarray(base)
    if base.dtype != np.uint8 or base.ndim != 2:
        raise ValueError("base must be a 2D uint8 display image")
    heat = _resize_bilinear(reduce_channels(a, channel_reduce), base.shape)
    support = heat > 0
    if mask is not None:
        m = np.asarray(getattr(mask, "pixels", mask))
        if m.shape != base.shape:
            raise ValueError("display mask shape differs from base")
        support &= m > 0
    out = np.repeat(base[:, :, None], 3, axis=2).astype(np.float64)
    if support.any():
        vals = heat[support]
        lo = vals.min()
        hi = vals.max()
        norm = np.ones_like(vals) if hi <= lo else (vals - lo) / (hi - lo)
        color = _colormap(norm) * 255.0
        out[support] = alpha * color + (1.0 - alpha) * out[support]
    return np.round(out).clip(0, 255).astype(np.uint8)


def save_activation(path, a: ActivationMap):
    header = {"h": a.h, "w": a.w, "c": a.c, "patient_id": a.patient_id,
              "view_angle_deg": a.view_angle_deg}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("ascii") + b"\n")
        fh.write(np.ascontiguousarray(a.values, dtype="<f4").tobytes())


def load_activation(path) -> ActivationMap:
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line.decode("ascii"))
            h, w, c = int(header["h"]), int(header["w"]), int(header["c"])
        except (ValueError, KeyError, UnicodeDecodeError) as e:
            raise ValueError(f"{path}: bad activation header: {e}") from None
        payload = fh.read()
    expect = h * w * c * 4
    if len(payload) != expect:
        raise ValueError(f"{path}: payload {len(payload)} bytes, expected {expect}")
    vals = np.frombuffer(payload, dtype="<f4").reshape(h, w, c)
    return ActivationMap(vals, str(header.get("patient_id", "")),
                         float(header.get("view_angle_deg", 0.0)))
