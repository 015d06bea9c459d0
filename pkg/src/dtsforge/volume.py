"""3D volume data model: HU grids with physical spacing, file I/O, binarization,
isotropic resampling.

Conventions used throughout the package:

* Voxel arrays are C-contiguous float32 indexed ``[z, y, x]`` (axial slice =
  ``values[k]``), so the raw byte stream is x-fastest.
* ``dims`` in headers and constructors is ``(nx, ny, nz)``, i.e. the reverse
  of the array shape.
* World coordinates are in mm relative to the isocenter. Voxel ``(i, j, k)``
  (x, y, z indices) has its center at ``origin + (i*sx, j*sy, k*sz)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

AIR_HU = -1000.0

_HEADER_FIELDS = ("dims", "spacing_mm", "origin_mm", "dtype", "byte_order",
                  "background_fill_hu", "raw_file")


class VolumeFormatError(ValueError):
    """Malformed header or payload in the volume file format."""


@dataclass
class CtVolume:
    """A 3D scalar grid in Hounsfield units with physical spacing.

    ``values`` has shape ``(nz, ny, nx)``; ``dims`` reports ``(nx, ny, nz)``.
    Volumes are treated as immutable once constructed; operations return new
    instances.
    """

    values: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = field(default=None)  # type: ignore[assignment]
    background_fill: float = AIR_HU

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise ValueError(f"expected a 3D array, got ndim={self.values.ndim}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(not np.isfinite(s) or s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be 3 positive finite reals, got {self.spacing}")
        if self.origin is None:
            self.origin = self.centered_origin(self.dims, self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("voxel values must all be finite")

    @staticmethod
    def centered_origin(dims, spacing):
        """Origin that puts the volume's center on the isocenter."""
        return tuple(-(n - 1) * s / 2.0 for n, s in zip(dims, spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.values.shape
        return (nx, ny, nz)

    def world_bounds(self):
        """(lo, hi) corners in mm of the cell-extent box (centers +/- half a voxel)."""
        lo = np.array(self.origin) - np.array(self.spacing) / 2.0
        hi = lo + np.array(self.dims) * np.array(self.spacing)
        return lo, hi


@dataclass
class BinaryVolume:
    """A {0,1}-valued volume sharing CtVolume's geometry fields."""

    values: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.uint8)
        if self.values.ndim != 3:
            raise ValueError(f"expected a 3D array, got ndim={self.values.ndim}")
        if not np.isin(self.values, (0, 1)).all():
            raise ValueError("binary volume may only contain 0 and 1")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(not np.isfinite(s) or s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be 3 positive finite reals, got {self.spacing}")
        if self.origin is None:
            self.origin = CtVolume.centered_origin(self.dims, self.spacing)
        self.origin = tuple(float(o) for o in self.origin)

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.values.shape
        return (nx, ny, nz)

    def world_bounds(self):
        lo = np.array(self.origin) - np.array(self.spacing) / 2.0
        hi = lo + np.array(self.dims) * np.array(self.spacing)
        return lo, hi

    def as_volume(self, inside_hu=0.0, outside_hu=AIR_HU) -> CtVolume:
        vals = np.where(self.values > 0, np.float32(inside_hu), np.float32(outside_hu))
        return CtVolume(vals, self.spacing, self.origin, background_fill=outside_hu)


def save_volume(v: CtVolume, path) -> None:
    """Write a volume as a JSON header plus a sibling raw float32 payload.

    ``path`` names the header file; the payload goes to the same name with a
    ``.raw`` suffix. Round-trips bit-exactly through :func:`load_volume`.
    """
    path = Path(path)
    raw_path = path.with_suffix(".raw")
    header = {
        "dims": list(v.dims),
        "spacing_mm": list(v.spacing),
        "origin_mm": list(v.origin),
        "dtype": "f32",
        "byte_order": "little",
        "background_fill_hu": float(v.background_fill),
        "raw_file": raw_path.name,
    }
    path.write_text(json.dumps(header, indent=2) + "\n")
    payload = v.values.astype("<f4", copy=False)
    raw_path.write_bytes(payload.tobytes())


def save_mask_volume(b: BinaryVolume, path) -> None:
    """Write a binary volume in the same header+raw format (values 0.0/1.0)."""
    vol = CtVolume(b.values.astype(np.float32), b.spacing, b.origin, background_fill=0.0)
    save_volume(vol, path)


def load_volume(path) -> CtVolume:
    """Load a header+raw volume pair written by :func:`save_volume`.

    Fails on missing header fields, unknown dtype/byte order, a payload whose
    size disagrees with the declared dims, and non-finite values.
    """
    path = Path(path)
    try:
        header = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise VolumeFormatError(f"cannot parse volume header {path}: {e}") from e
    missing = [k for k in _HEADER_FIELDS if k not in header]
    if missing:
        raise VolumeFormatError(f"{path}: header missing fields {missing}")
    if header["dtype"] != "f32":
        raise VolumeFormatError(f"{path}: unsupported dtype {header['dtype']!r}")
    if header["byte_order"] != "little":
        raise VolumeFormatError(f"{path}: unsupported byte order {header['byte_order']!r}")
    dims = [int(n) for n in header["dims"]]
    if len(dims) != 3 or any(n <= 0 for n in dims):
        raise VolumeFormatError(f"{path}: dims must be 3 positive integers, got {dims}")
    nx, ny, nz = dims
    raw_path = path.parent / header["raw_file"]
    try:
        payload = raw_path.read_bytes()
    except OSError as e:
        raise VolumeFormatError(f"cannot read raw payload {raw_path}: {e}") from e
    expected = nx * ny * nz * 4
    if len(payload) != expected:
        raise VolumeFormatError(
            f"{raw_path}: payload is {len(payload)} bytes, dims {dims} require {expected}")
    values = np.frombuffer(payload, dtype="<f4").reshape(nz, ny, nx)
    if not np.all(np.isfinite(values)):
        raise VolumeFormatError(f"{raw_path}: payload contains non-finite values")
    return CtVolume(values.copy(), tuple(header["spacing_mm"]),
                    tuple(header["origin_mm"]),
                    background_fill=float(header["background_fill_hu"]))


def load_mask_volume(path) -> BinaryVolume:
    """Load a binary volume, checking that every voxel is exactly 0 or 1."""
    vol = load_volume(path)
    if not np.isin(vol.values, (0.0, 1.0)).all():
        raise VolumeFormatError(f"{path}: mask volume contains values other than 0/1")
    return BinaryVolume(vol.values.astype(np.uint8), vol.spacing, vol.origin)


def resample_isotropic(v: CtVolume, target_mm: float = 1.0) -> CtVolume:
    """Resample to an isotropic grid by trilinear interpolation.

    Output dims are ``round(dims * spacing / target)`` (half-up, minimum 1)
    per axis; the first output voxel center stays on the input origin. Sample
    points outside the voxel-center support take ``background_fill`` exactly,
    so every output value is either a convex combination of input values or
    the background fill.
    """
    if not np.isfinite(target_mm) or target_mm <= 0:
        raise ValueError(f"target spacing must be positive, got {target_mm}")
    nx, ny, nz = v.dims
    sx, sy, sz = v.spacing
    out_dims = tuple(max(1, int(np.floor(n * s / target_mm + 0.5)))
                     for n, s in zip((nx, ny, nz), (sx, sy, sz)))
    if out_dims == (nx, ny, nz) and all(abs(s - target_mm) < 1e-12 for s in v.spacing):
        return CtVolume(v.values.copy(), (target_mm,) * 3, v.origin, v.background_fill)

    onx, ony, onz = out_dims
    # Input index coordinate of each output voxel center, per axis. Trilinear
    # interpolation is separable, so apply one 1D linear pass per axis instead
    # of materializing a full coordinate grid.
    ix = np.arange(onx) * (target_mm / sx)
    iy = np.arange(ony) * (target_mm / sy)
    iz = np.arange(onz) * (target_mm / sz)
    out = _lerp_axis(v.values, iz, axis=0)
    out = _lerp_axis(out, iy, axis=1)
    out = _lerp_axis(out, ix, axis=2)
    outside = (iz > nz - 1)[:, None, None] | (iy > ny - 1)[None, :, None] \
        | (ix > nx - 1)[None, None, :]
    out[outside] = v.background_fill
    return CtVolume(out, (target_mm,) * 3, v.origin, v.background_fill)


def _lerp_axis(a: np.ndarray, pos: np.ndarray, axis: int) -> np.ndarray:
    """1D linear interpolation of ``a`` at fractional indices ``pos`` along ``axis``,
    replicating the edge sample beyond the ends."""
    n = a.shape[axis]
    p = np.clip(pos, 0.0, n - 1.0)
    i0 = np.floor(p).astype(np.intp)
    i0 = np.minimum(i0, n - 2) if n > 1 else np.zeros_like(i0)
    i1 = np.minimum(i0 + 1, n - 1)
    w = (p - i0).astype(np.float32)
    shape = [1, 1, 1]
    shape[axis] = len(pos)
    w = w.reshape(shape)
    lo = np.take(a, i0, axis=axis)
    hi = np.take(a, i1, axis=axis)
    return (lo * (1.0 - w) + hi * w).astype(np.float32)


def binarize(v: CtVolume, threshold_hu: float) -> BinaryVolume:
    """Threshold a volume: voxel is 1 iff HU >= threshold (inclusive)."""
    return BinaryVolume((v.values >= threshold_hu).astype(np.uint8), v.spacing, v.origin)
