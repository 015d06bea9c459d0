"""Cone-beam forward projection of CT volumes onto a flat-panel detector.

Geometry: the source and detector rotate rigidly about the z axis (patient
superior-inferior), with the patient isocenter between them. At a view angle
of zero the source sits anterior to the patient at ``(0, -sod, 0)`` and the
detector center posterior at ``(0, oid, 0)``; a positive angle swings the
source toward the patient's left. Detector columns run along the rotated
x axis, rows along -z so that row 0 is superior.

Each detector pixel value is the line integral of the linear attenuation
coefficient from the source to the pixel center, computed by fixed-step
midpoint sampling with trilinear interpolation; the step is half the smallest
voxel pitch of the projected volume. Stored values are raw integrals
(dimensionless); ``to_display`` renders the radiograph-style 8-bit view.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .volume import CtVolume, BinaryVolume

DEFAULT_ANGLES_DEG = (-60.0, -30.0, 0.0, 30.0, 60.0)


@dataclass(frozen=True)
class AttenuationModel:
    """Water-scaled linear attenuation: ``mu = mu_water * (1 + HU/1000)``,
    floored at zero so values at or below -1000 HU are perfectly radiolucent."""
    mu_water_per_mm: float = 0.02

    def mu_of(self, hu) -> np.ndarray:
        out = np.asarray(self.mu_water_per_mm
                         * (1.0 + np.asarray(hu, dtype=np.float32) / 1000.0))
        np.maximum(out, 0.0, out=out)
        return out


DEFAULT_MODEL = AttenuationModel()


@dataclass(frozen=True)
class ProjectionGeometry:
    """Source/detector layout. The three distances are redundant on purpose:
    construction rejects any triple with ``sid != sod + oid``."""
    sod_mm: float = 541.0
    sid_mm: float = 949.0
    oid_mm: float = 408.0
    detector_mm: tuple[float, float] = (500.0, 500.0)   # (width, height)
    detector_px: tuple[int, int] = (512, 512)           # (cols, rows)
    view_angles_deg: tuple[float, ...] = DEFAULT_ANGLES_DEG

    def __post_init__(self):
        if self.sod_mm <= 0 or self.sid_mm <= 0 or self.oid_mm <= 0:
            raise ValueError("distances must be positive")
        if abs(self.sod_mm + self.oid_mm - self.sid_mm) > 1e-6 * self.sid_mm:
            raise ValueError(
                f"inconsistent distances: sod {self.sod_mm} + oid {self.oid_mm} "
                f"!= sid {self.sid_mm}")
        if min(self.detector_mm) <= 0 or min(self.detector_px) < 1:
            raise ValueError("detector size/pixel counts must be positive")
        if len(self.view_angles_deg) == 0:
            raise ValueError("need at least one view angle")
        if len(set(self.view_angles_deg)) != len(self.view_angles_deg):
            raise ValueError("view angles must be distinct")

    @property
    def n_views(self) -> int:
        return len(self.view_angles_deg)

    @property
    def magnification(self) -> float:
        """Size ratio at the detector for an object at the isocenter."""
        return self.sid_mm / self.sod_mm

    @property
    def pixel_mm(self) -> tuple[float, float]:
        return (self.detector_mm[0] / self.detector_px[0],
                self.detector_mm[1] / self.detector_px[1])

    @property
    def fan_angle_deg(self) -> float:
        """Full horizontal beam opening, source apex to detector edges."""
        return 2.0 * math.degrees(math.atan(0.5 * self.detector_mm[0] / self.sid_mm))


def save_geometry(geometry: ProjectionGeometry, path):
    doc = {
        "sod_mm": geometry.sod_mm,
        "sid_mm": geometry.sid_mm,
        "oid_mm": geometry.oid_mm,
        "detector_mm": list(geometry.detector_mm),
        "detector_px": list(geometry.detector_px),
        "view_angles_deg": list(geometry.view_angles_deg),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_geometry(path) -> ProjectionGeometry:
    doc = json.loads(Path(path).read_text())
    try:
        return ProjectionGeometry(
            sod_mm=float(doc["sod_mm"]), sid_mm=float(doc["sid_mm"]),
            oid_mm=float(doc["oid_mm"]),
            detector_mm=tuple(float(v) for v in doc["detector_mm"]),
            detector_px=tuple(int(v) for v in doc["detector_px"]),
            view_angles_deg=tuple(float(v) for v in doc["view_angles_deg"]))
    except KeyError as e:
        raise ValueError(f"{path}: geometry file missing field {e}") from None


@dataclass
class ProjectionImage:
    """One detector image: raw line integrals (kind "intensity") or a binary
    per-view mask (kind "mask"). ``pixels[row, col]``, row 0 superior."""
    pixels: np.ndarray
    view_angle_deg: float
    geometry: ProjectionGeometry
    kind: str = "intensity"

    def __post_init__(self):
        if self.kind not in ("intensity", "mask"):
            raise ValueError(f"unknown image kind {self.kind!r}")
        if self.kind == "mask":
            bad = np.setdiff1d(np.unique(self.pixels), [0, 1])
            if bad.size:
                raise ValueError("mask image must be strictly 0/1")
        elif not np.isfinite(self.pixels).all() or (self.pixels < 0).any():
            raise ValueError("intensity image must be finite and non-negative")


@njit(cache=True, fastmath=True, nogil=True)
def _integrate_rays(vol, ox, oy, oz, isx, isy, isz,
                    lx, ly, lz, hx, hy, hz,
                    srcx, srcy, srcz, cenx, ceny, cenz,
                    ux, uy, uz, pu, pv, w2, h2,
                    ncols, nrows, step, out):
    nz, ny, nx = vol.shape
    for r in range(nrows):
        v = h2 - (r + 0.5) * pv
        for c in range(ncols):
            u = (c + 0.5) * pu - w2
            # pixel center in world mm; detector rows run along -z
            px = cenx + u * ux
            py = ceny + u * uy
            pz = cenz + u * uz + v
            dx = px - srcx
            dy = py - srcy
            dz = pz - srcz
            length = math.sqrt(dx * dx + dy * dy + dz * dz)
            dx /= length
            dy /= length
            dz /= length
            # slab intersection with the voxel-cell bounding box
            t0 = 0.0
            t1 = length
            if dx != 0.0:
                ta = (lx - srcx) / dx
                tb = (hx - srcx) / dx
                if ta > tb:
                    ta, tb = tb, ta
                if ta > t0:
                    t0 = ta
                if tb < t1:
                    t1 = tb
            elif srcx < lx or srcx > hx:
                out[r, c] = 0.0
                continue
            if dy != 0.0:
                ta = (ly - srcy) / dy
                tb = (hy - srcy) / dy
                if ta > tb:
                    ta, tb = tb, ta
                if ta > t0:
                    t0 = ta
                if tb < t1:
                    t1 = tb
            elif srcy < ly or srcy > hy:
                out[r, c] = 0.0
                continue
            if dz != 0.0:
                ta = (lz - srcz) / dz
                tb = (hz - srcz) / dz
                if ta > tb:
                    ta, tb = tb, ta
                if ta > t0:
                    t0 = ta
                if tb < t1:
                    t1 = tb
            elif srcz < lz or srcz > hz:
                out[r, c] = 0.0
                continue
            seg = t1 - t0
            if seg <= 0.0:
                out[r, c] = 0.0
                continue
            m = int(math.ceil(seg / step))
            h = seg / m
            total = 0.0
            for i in range(m):
                t = t0 + (i + 0.5) * h
                fx = (srcx + t * dx - ox) * isx
                fy = (srcy + t * dy - oy) * isy
                fz = (srcz + t * dz - oz) * isz
                if fx < 0.0:
                    fx = 0.0
                elif fx > nx - 1:
                    fx = nx - 1.0
                if fy < 0.0:
                    fy = 0.0
                elif fy > ny - 1:
                    fy = ny - 1.0
                if fz < 0.0:
                    fz = 0.0
                elif fz > nz - 1:
                    fz = nz - 1.0
                ix = int(fx)
                iy = int(fy)
                iz = int(fz)
                if ix > nx - 2:
                    ix = nx - 2
                if iy > ny - 2:
                    iy = ny - 2
                if iz > nz - 2:
                    iz = nz - 2
                wx = fx - ix
                wy = fy - iy
                wz = fz - iz
                c00 = vol[iz, iy, ix] * (1 - wx) + vol[iz, iy, ix + 1] * wx
                c01 = vol[iz, iy + 1, ix] * (1 - wx) + vol[iz, iy + 1, ix + 1] * wx
                c10 = vol[iz + 1, iy, ix] * (1 - wx) + vol[iz + 1, iy, ix + 1] * wx
                c11 = vol[iz + 1, iy + 1, ix] * (1 - wx) + vol[iz + 1, iy + 1, ix + 1] * wx
                total += (c00 * (1 - wy) + c01 * wy) * (1 - wz) + \
                         (c10 * (1 - wy) + c11 * wy) * wz
            out[r, c] = total * h
    return out


def _project_values(values: np.ndarray, spacing, origin, geometry: ProjectionGeometry,
                    angle_deg: float) -> np.ndarray:
    """Line integrals of an arbitrary scalar field stored like a volume."""
    nz, ny, nx = values.shape
    if nx < 2 or ny < 2 or nz < 2:
        raise ValueError("projection needs at least 2 voxels per axis")
    sx, sy, sz = (float(s) for s in spacing)
    ox, oy, oz = (float(o) for o in origin)
    lo = (ox - 0.5 * sx, oy - 0.5 * sy, oz - 0.5 * sz)
    hi = (ox + (nx - 0.5) * sx, oy + (ny - 0.5) * sy, oz + (nz - 0.5) * sz)

    th = math.radians(angle_deg)
    sdx, sdy = math.sin(th), -math.cos(th)          # isocenter -> source direction
    src = (geometry.sod_mm * sdx, geometry.sod_mm * sdy, 0.0)
    cen = (-geometry.oid_mm * sdx, -geometry.oid_mm * sdy, 0.0)
    uax = (math.cos(th), math.sin(th), 0.0)

    ncols, nrows = geometry.detector_px
    pu, pv = geometry.pixel_mm
    step = 0.5 * min(sx, sy, sz)
    out = np.empty((nrows, ncols), dtype=np.float32)
    _integrate_rays(np.ascontiguousarray(values, dtype=np.float32),
                    ox, oy, oz, 1.0 / sx, 1.0 / sy, 1.0 / sz,
                    lo[0], lo[1], lo[2], hi[0], hi[1], hi[2],
                    src[0], src[1], src[2], cen[0], cen[1], cen[2],
                    uax[0], uax[1], uax[2], pu, pv,
                    0.5 * geometry.detector_mm[0], 0.5 * geometry.detector_mm[1],
                    ncols, nrows, step, out)
    return out


def project_view(volume: CtVolume, geometry: ProjectionGeometry, angle_deg: float,
                 model: AttenuationModel = DEFAULT_MODEL) -> ProjectionImage:
    """Attenuation line-integral image of a CT volume for one view angle."""
    mu = model.mu_of(volume.values)
    vals = _project_values(mu, volume.spacing, volume.origin, geometry, angle_deg)
    return ProjectionImage(vals, float(angle_deg), geometry)


def project_all_views(volume: CtVolume, geometry: ProjectionGeometry,
                      model: AttenuationModel = DEFAULT_MODEL) -> list[ProjectionImage]:
    mu = model.mu_of(volume.values)
    out = []
    for ang in geometry.view_angles_deg:
        vals = _project_values(mu, volume.spacing, volume.origin, geometry, float(ang))
        out.append(ProjectionImage(vals, float(ang), geometry))
    return out


def project_thickness(mask: BinaryVolume, geometry: ProjectionGeometry,
                      angle_deg: float) -> np.ndarray:
    """Per-ray path length (mm) through the set bits of a binary volume."""
    return _project_values(mask.values.astype(np.float32), mask.spacing, mask.origin,
                           geometry, angle_deg)


def project_binary_mask(mask: BinaryVolume, geometry: ProjectionGeometry, angle_deg: float,
                        min_path_mm: float = 1.0) -> ProjectionImage:
    """Project a binary volume into a per-view 2D mask.

    A detector pixel is set when its ray crosses more than ``min_path_mm`` of
    the masked region, which keeps grazing rays out of the mask.
    """
    thick = project_thickness(mask, geometry, angle_deg)
    return ProjectionImage((thick > min_path_mm).astype(np.uint8), float(angle_deg),
                           geometry, kind="mask")


def _resize_bilinear(img: np.ndarray, out_shape) -> np.ndarray:
    """Plain bilinear resize with half-pixel-aligned centers and edge clamp."""
    h, w = img.shape
    oh, ow = out_shape
    if (oh, ow) == (h, w):
        return img.astype(np.float64, copy=True)
    ry = np.clip((np.arange(oh) + 0.5) * (h / oh) - 0.5, 0, h - 1)
    rx = np.clip((np.arange(ow) + 0.5) * (w / ow) - 0.5, 0, w - 1)
    y0 = np.minimum(ry.astype(np.intp), h - 2)
    x0 = np.minimum(rx.astype(np.intp), w - 2)
    fy = (ry - y0)[:, None]
    fx = (rx - x0)[None, :]
    a = img[np.ix_(y0, x0)]
    b = img[np.ix_(y0, x0 + 1)]
    c = img[np.ix_(y0 + 1, x0)]
    d = img[np.ix_(y0 + 1, x0 + 1)]
    return (a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx
            + c * fy * (1 - fx) + d * fy * fx)


def to_display(p: ProjectionImage, out_px: tuple[int, int] = (512, 512)) -> np.ndarray:
    """Radiograph-style 8-bit rendering of a raw integral image.

    Negates the integrals (air bright, dense structures dark), resizes
    bilinearly to ``out_px`` (rows, cols), then applies 256-bin histogram
    equalization: value -> round(255 * (cdf - cdf_min) / (1 - cdf_min)).
    A constant image maps to a single full-bright level.
    """
    if p.kind != "intensity":
        raise ValueError("display transform is defined for intensity images only")
    img = _resize_bilinear(-p.pixels.astype(np.float64), out_px)
    lo = img.min()
    hi = img.max()
    if hi <= lo:
        return np.full(out_px, 255, dtype=np.uint8)
    nbins = 256
    idx = np.minimum(((img - lo) / (hi - lo) * nbins).astype(np.intp), nbins - 1)
    counts = np.bincount(idx.ravel(), minlength=nbins)
    cdf = np.cumsum(counts) / idx.size
    cdf_min = cdf[np.flatnonzero(counts)[0]]
    if cdf_min >= 1.0:
        return np.full(out_px, 255, dtype=np.uint8)
    levels = np.round(255.0 * (cdf - cdf_min) / (1.0 - cdf_min)).astype(np.uint8)
    return levels[idx]
