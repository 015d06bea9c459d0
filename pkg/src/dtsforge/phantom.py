"""Deterministic synthetic chest phantoms with analytic ground truth.

A phantom is assembled from analytic solids on a voxel grid: an ellipsoidal
body (soft tissue), two ellipsoidal lungs (near-air parenchyma), a detached
bed arc posterior to the body, optional spherical lesions inside a lung, and
an optional occluder box anterior to the left lung used to construct
frontal-view misses.

The HU field is antialiased: voxels cut by a solid's surface get a
partial-volume HU from supersampling, which keeps ray integrals through the
voxelized solids close to their analytic values. Ground-truth masks are exact
voxel-center membership tests.

Axes: x left-right, y anterior(-)/posterior(+), z inferior(-)/superior(+),
all in mm about the isocenter.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .volume import CtVolume, BinaryVolume, save_volume, save_mask_volume, AIR_HU

BODY_HU = 0.0
LUNG_HU = -800.0
BED_HU = 300.0
LESION_HU = 50.0
DENSE_LESION_HU = 900.0
OCCLUDER_HU = 3000.0

_SUPERSAMPLE = 4  # per-axis subsamples for boundary voxels


@dataclass
class Ellipsoid:
    center: tuple[float, float, float]
    radii: tuple[float, float, float]
    hu: float


@dataclass
class Sphere:
    center: tuple[float, float, float]
    radius: float
    hu: float = LESION_HU


@dataclass
class BedArc:
    """Partial cylindrical shell posterior to the body, axis along z, spanning
    the full z extent. The arc covers directions within ``half_angle_deg`` of
    straight-posterior (+y) as seen from the cylinder center."""
    center_xy: tuple[float, float]
    inner_radius: float
    outer_radius: float
    half_angle_deg: float = 50.0
    hu: float = BED_HU


@dataclass
class Box:
    """Axis-aligned box occluder (dense or radiolucent mediastinal structure)."""
    center: tuple[float, float, float]
    half_size: tuple[float, float, float]
    hu: float


@dataclass
class PhantomSpec:
    seed: int = 0
    dims: tuple[int, int, int] = (160, 140, 120)   # (nx, ny, nz)
    spacing: tuple[float, float, float] = (2.0, 2.0, 2.0)
    # The torso spans the full z range (a chest scan is a section of a longer
    # body), so every axial slice keeps a large body cross-section.
    body: Ellipsoid | Box = field(default_factory=lambda: Ellipsoid(
        (0.0, 0.0, 0.0), (150.0, 105.0, 130.0), BODY_HU))
    lungs: tuple = field(default_factory=lambda: (
        Ellipsoid((-52.0, 8.0, 4.0), (42.0, 62.0, 88.0), LUNG_HU),
        Ellipsoid((52.0, 8.0, 4.0), (42.0, 62.0, 88.0), LUNG_HU),
    ))
    bed: BedArc | None = field(default_factory=lambda: BedArc((0.0, -139.0), 260.0, 272.0))
    lesions: list[Sphere] = field(default_factory=list)
    occluder: Box | None = None

    @property
    def label(self) -> int:
        """1 (abnormal) iff the lesion list is non-empty."""
        return 1 if self.lesions else 0

    def validate(self):
        for les in self.lesions:
            if not any(_sphere_inside(les, lung) for lung in self.lungs):
                raise ValueError(f"lesion at {les.center} r={les.radius} is not inside a lung")
        if self.bed is not None:
            gap = self._bed_body_gap()
            if gap < 5.0:
                raise ValueError(f"bed arc comes within {gap:.1f} mm of the body (need >= 5)")

    def _bed_body_gap(self) -> float:
        """Min distance between the bed arc's inner surface and the body outline
        (both z-invariant), by dense boundary sampling."""
        bed = self.bed
        bx, by = bed.center_xy
        phi = np.radians(np.linspace(-bed.half_angle_deg, bed.half_angle_deg, 361))
        ax = bx + bed.inner_radius * np.sin(phi)
        ay = by + bed.inner_radius * np.cos(phi)
        ex, ey = _xy_outline(self.body)
        d2 = (ax[:, None] - ex[None, :]) ** 2 + (ay[:, None] - ey[None, :]) ** 2
        return float(np.sqrt(d2.min()))


def _xy_outline(solid, samples: int = 1440):
    """Boundary sample points of a solid's axial cross-section through its center."""
    if isinstance(solid, Ellipsoid):
        t = np.linspace(0, 2 * np.pi, samples, endpoint=False)
        return (solid.center[0] + solid.radii[0] * np.cos(t),
                solid.center[1] + solid.radii[1] * np.sin(t))
    if isinstance(solid, Box):
        cx, cy, _ = solid.center
        hx, hy, _ = solid.half_size
        t = np.linspace(-1, 1, samples // 4)
        xs = np.concatenate([t * hx, np.full_like(t, hx), t * hx, np.full_like(t, -hx)])
        ys = np.concatenate([np.full_like(t, -hy), t * hy, np.full_like(t, hy), t * hy])
        return cx + xs, cy + ys
    raise TypeError(f"no xy outline for {type(solid)}")


def _sphere_inside(s: Sphere, solid) -> bool:
    """Conservative containment test: shrink the container by the sphere radius."""
    if isinstance(solid, Ellipsoid):
        shrunk = [r - s.radius for r in solid.radii]
        if any(r <= 0 for r in shrunk):
            return False
        d = [(c - ec) / r for c, ec, r in zip(s.center, solid.center, shrunk)]
        return float(np.sum(np.square(d))) <= 1.0
    if isinstance(solid, Box):
        return all(abs(c - bc) <= h - s.radius
                   for c, bc, h in zip(s.center, solid.center, solid.half_size))
    raise TypeError(f"no containment test for {type(solid)}")


def _grid_coords(spec: PhantomSpec):
    nx, ny, nz = spec.dims
    sx, sy, sz = spec.spacing
    ox, oy, oz = CtVolume.centered_origin(spec.dims, spec.spacing)
    x = ox + sx * np.arange(nx, dtype=np.float64)
    y = oy + sy * np.arange(ny, dtype=np.float64)
    z = oz + sz * np.arange(nz, dtype=np.float64)
    return x, y, z


def _inside_points(solid, px, py, pz):
    """Membership test for broadcastable point coordinate arrays."""
    if isinstance(solid, Ellipsoid):
        cx, cy, cz = solid.center
        rx, ry, rz = solid.radii
        return (((px - cx) / rx) ** 2 + ((py - cy) / ry) ** 2 + ((pz - cz) / rz) ** 2) <= 1.0
    if isinstance(solid, Sphere):
        cx, cy, cz = solid.center
        return ((px - cx) ** 2 + (py - cy) ** 2 + (pz - cz) ** 2) <= solid.radius ** 2
    if isinstance(solid, Box):
        cx, cy, cz = solid.center
        hx, hy, hz = solid.half_size
        return (np.abs(px - cx) <= hx) & (np.abs(py - cy) <= hy) & (np.abs(pz - cz) <= hz)
    if isinstance(solid, BedArc):
        bx, by = solid.center_xy
        r = np.hypot(px - bx, py - by)
        ang = np.abs(np.degrees(np.arctan2(px - bx, py - by)))  # angle off +y
        hit = (r >= solid.inner_radius) & (r <= solid.outer_radius) \
            & (ang <= solid.half_angle_deg)
        return hit & (pz == pz)  # broadcast over z
    raise TypeError(f"unknown solid {type(solid)}")


def _membership_mask(solid, x, y, z) -> np.ndarray:
    m = _inside_points(solid, x[None, None, :], y[None, :, None], z[:, None, None])
    return np.broadcast_to(m, (len(z), len(y), len(x))).astype(np.uint8)


def _paint(values: np.ndarray, solid, spec: PhantomSpec, x, y, z):
    """Composite a solid into the HU field with antialiased boundaries.

    Cells whose digital boundary neighborhood straddles the surface get a
    partial-volume HU; strictly interior cells take the solid's HU.
    """
    inside = _membership_mask(solid, x, y, z).astype(bool)
    if not inside.any():
        return
    struct = np.ones((3, 3, 3), bool)
    core = ndimage.binary_erosion(inside, structure=struct, border_value=0)
    grown = ndimage.binary_dilation(inside, structure=struct)
    boundary = grown & ~core
    values[core] = solid.hu
    idx = np.argwhere(boundary)
    frac = _coverage_fraction(solid, idx, spec, x, y, z)
    flat = (idx[:, 0], idx[:, 1], idx[:, 2])
    values[flat] = values[flat] * (1.0 - frac) + np.float32(solid.hu) * frac


def _coverage_fraction(solid, idx, spec: PhantomSpec, x, y, z):
    """Fraction of each listed voxel's cell covered by the solid."""
    n = _SUPERSAMPLE
    offs = (np.arange(n) + 0.5) / n - 0.5
    sx, sy, sz = spec.spacing
    cx = x[idx[:, 2]]
    cy = y[idx[:, 1]]
    cz = z[idx[:, 0]]
    count = np.zeros(len(idx), dtype=np.int32)
    for oz in offs:
        for oy in offs:
            for ox in offs:
                count += _inside_points(solid, cx + ox * sx, cy + oy * sy, cz + oz * sz)
    return (count / float(n ** 3)).astype(np.float32)


def generate(spec: PhantomSpec):
    """Voxelize a phantom spec.

    Returns ``(volume, subject_truth, lung_truth, label)``; the truth masks
    are center-membership rasterizations of the body and lung solids (the
    occluder region, when present, is carved out of the lung mask).
    """
    spec.validate()
    x, y, z = _grid_coords(spec)
    nx, ny, nz = spec.dims
    values = np.full((nz, ny, nx), AIR_HU, dtype=np.float32)

    _paint(values, spec.body, spec, x, y, z)
    for lung in spec.lungs:
        _paint(values, lung, spec, x, y, z)
    if spec.occluder is not None:
        _paint(values, spec.occluder, spec, x, y, z)
    for les in spec.lesions:
        _paint(values, les, spec, x, y, z)
    if spec.bed is not None:
        _paint(values, spec.bed, spec, x, y, z)

    origin = CtVolume.centered_origin(spec.dims, spec.spacing)
    vol = CtVolume(values, spec.spacing, origin)

    subject = _membership_mask(spec.body, x, y, z)
    lung = np.zeros_like(subject)
    for l in spec.lungs:
        lung |= _membership_mask(l, x, y, z)
    if spec.occluder is not None:
        lung[_membership_mask(spec.occluder, x, y, z) > 0] = 0
    subject_truth = BinaryVolume(subject, spec.spacing, origin)
    lung_truth = BinaryVolume(lung, spec.spacing, origin)
    return vol, subject_truth, lung_truth, spec.label


def bed_truth_mask(spec: PhantomSpec) -> BinaryVolume:
    """Center-membership mask of the bed arc (empty if the spec has no bed)."""
    x, y, z = _grid_coords(spec)
    nx, ny, nz = spec.dims
    origin = CtVolume.centered_origin(spec.dims, spec.spacing)
    if spec.bed is None:
        return BinaryVolume(np.zeros((nz, ny, nx), np.uint8), spec.spacing, origin)
    return BinaryVolume(_membership_mask(spec.bed, x, y, z), spec.spacing, origin)


def jittered_spec(seed: int, abnormal: bool, dims=(160, 140, 120),
                  spacing=(2.0, 2.0, 2.0)) -> PhantomSpec:
    """One cohort member: the default anatomy with per-seed geometric jitter."""
    rng = np.random.default_rng(seed)

    def jit(lo, hi):
        return float(rng.uniform(lo, hi))

    body = Ellipsoid((jit(-4, 4), jit(-4, 4), 0.0),
                     (150.0 * jit(0.93, 1.05), 105.0 * jit(0.93, 1.05),
                      130.0 * jit(1.0, 1.08)), BODY_HU)
    lungs = (
        Ellipsoid((-52.0 + jit(-3, 3), 8.0 + jit(-3, 3), 4.0 + jit(-3, 3)),
                  (42.0 * jit(0.9, 1.06), 62.0 * jit(0.9, 1.06), 88.0 * jit(0.92, 1.04)),
                  LUNG_HU),
        Ellipsoid((52.0 + jit(-3, 3), 8.0 + jit(-3, 3), 4.0 + jit(-3, 3)),
                  (42.0 * jit(0.9, 1.06), 62.0 * jit(0.9, 1.06), 88.0 * jit(0.92, 1.04)),
                  LUNG_HU),
    )
    bed = BedArc((jit(-3, 3), -139.0 + jit(0, 4)), 260.0, 272.0 + jit(0, 4))

    lesions = []
    if abnormal:
        for _ in range(64):
            radius = jit(14.0, 18.0)
            lung = lungs[int(rng.integers(0, 2))]
            frac = [jit(-0.5, 0.5) for _ in range(3)]
            center = tuple(c + f * r for c, f, r in zip(lung.center, frac, lung.radii))
            cand = Sphere(center, radius)
            if _sphere_inside(cand, lung):
                lesions.append(cand)
                break
        else:
            raise RuntimeError("could not place a lesion inside the lung")

    return PhantomSpec(seed=seed, dims=dims, spacing=spacing, body=body,
                       lungs=lungs, bed=bed, lesions=lesions)


def jittered_occluded_spec(seed: int, abnormal: bool, dims=(152, 136, 80),
                           spacing=(2.5, 2.5, 3.0)) -> PhantomSpec:
    """Cohort member whose lesions hide behind a dense mediastinal block.

    Stylized anatomy chosen so the view-level outcome is decided by geometry
    rather than tuning: a single box lung sits on the rotation axis, so every
    ray the scorer looks at passes close to the axis, where the chord through
    the (z-uniform) body ellipsoid is stationary and the in-lung background
    is flat. A radiopaque block straddles the midline anterior to the lung,
    and every lesion is placed inside its frontal shadow: on the 0° view the
    lesion region reads as radiopaque and is discounted, while the oblique
    sources look past the block straight at the lesion.
    """
    rng = np.random.default_rng(seed)

    def jit(lo, hi):
        return float(rng.uniform(lo, hi))

    body = Ellipsoid((jit(-3, 3), jit(-3, 3), 0.0),
                     (170.0 * jit(0.97, 1.05), 130.0 * jit(0.97, 1.05), 250.0),
                     BODY_HU)
    lungs = (
        Box((jit(-2, 2), 8.0 + jit(-2, 2), 4.0 + jit(-2, 2)),
            (22.0 * jit(0.95, 1.05), 30.0 * jit(0.95, 1.05), 86.0 * jit(0.95, 1.05)),
            LUNG_HU),
    )
    # several voxels of clearance even at the widest body cross-section: with
    # tangent surfaces ~2 px apart the slice-wise median blur can weld bed to
    # body, and the welded arc then survives removal
    bed = BedArc((jit(-3, 3), -115.0 + jit(0, 4)), 268.0, 280.0 + jit(0, 4))
    # deep enough anterior that the +-30 deg parallax swings its shadow (and
    # the shadow's corner-grazing taper) clear of the in-lung scoring stripe
    occluder = Box((0.0, -95.0, 7.0), (20.0, 10.0, 26.0), OCCLUDER_HU)

    lesions = []
    if abnormal:
        for _ in range(64):
            cand = Sphere((jit(-4, 4), jit(6, 10), jit(-6, 22)),
                          jit(10.0, 12.0), DENSE_LESION_HU)
            if _sphere_inside(cand, lungs[0]):
                lesions.append(cand)
                break
        else:
            raise RuntimeError("could not place a lesion inside the lung")

    return PhantomSpec(seed=seed, dims=dims, spacing=spacing, body=body,
                       lungs=lungs, bed=bed, lesions=lesions, occluder=occluder)


def _solid_from_dict(d: dict):
    kind = str(d.get("type", "ellipsoid"))
    if kind == "ellipsoid":
        return Ellipsoid(tuple(d["center"]), tuple(d["radii"]), float(d.get("hu", BODY_HU)))
    if kind == "box":
        return Box(tuple(d["center"]), tuple(d["half_size"]), float(d.get("hu", BODY_HU)))
    if kind == "sphere":
        return Sphere(tuple(d["center"]), float(d["radius"]), float(d.get("hu", LESION_HU)))
    raise ValueError(f"unknown solid type {kind!r}")


def spec_from_dict(d: dict) -> PhantomSpec:
    """Build a PhantomSpec from parsed JSON; omitted fields keep defaults."""
    known = {"seed", "dims", "spacing", "body", "lungs", "bed", "lesions", "occluder"}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown phantom spec keys: {sorted(unknown)}")
    kw: dict = {}
    if "seed" in d:
        kw["seed"] = int(d["seed"])
    for name in ("dims", "spacing"):
        if name in d:
            kw[name] = tuple(d[name])
    if "body" in d:
        kw["body"] = _solid_from_dict(d["body"])
    if "lungs" in d:
        kw["lungs"] = tuple(_solid_from_dict(s) for s in d["lungs"])
    if "bed" in d:
        b = d["bed"]
        kw["bed"] = None if b is None else BedArc(
            tuple(b["center_xy"]), float(b["inner_radius"]), float(b["outer_radius"]),
            float(b.get("half_angle_deg", 50.0)), float(b.get("hu", BED_HU)))
    if "lesions" in d:
        kw["lesions"] = [_solid_from_dict({**s, "type": "sphere"}) for s in d["lesions"]]
    if "occluder" in d:
        o = d["occluder"]
        kw["occluder"] = None if o is None else _solid_from_dict({**o, "type": "box"})
    return PhantomSpec(**kw)


def generate_cohort(n_normal: int, n_abnormal: int, seed: int, out_dir,
                    dims=None, spacing=None, style: str = "ellipsoid",
                    write_lung_masks: bool = True):
    """Write a reproducible phantom cohort plus a truth CSV.

    ``style`` picks the anatomy family: "ellipsoid" for the default rounded
    torso, "occluded" for the stylized torso whose lesions hide behind a
    dense mediastinal block on the frontal view. Files per patient ``pXXX``:
    volume header+raw and (optionally) the ground-truth lung mask used for
    projected-mask supervision. Returns the list of (patient_id, label)
    pairs in file order.
    """
    if style not in ("ellipsoid", "occluded"):
        raise ValueError(f"unknown cohort style {style!r}")
    make = jittered_spec if style == "ellipsoid" else jittered_occluded_spec
    kwargs = {}
    if dims is not None:
        kwargs["dims"] = tuple(dims)
    if spacing is not None:
        kwargs["spacing"] = tuple(spacing)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = [0] * n_normal + [1] * n_abnormal
    records = []
    for i, label in enumerate(labels):
        pid = f"p{i:03d}"
        spec = make(seed * 100003 + i, abnormal=bool(label), **kwargs)
        vol, subject, lung, _ = generate(spec)
        save_volume(vol, out_dir / f"{pid}.json")
        if write_lung_masks:
            save_mask_volume(lung, out_dir / f"{pid}_lung.json")
        records.append((pid, label))
    with open(out_dir / "truth.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patient_id", "label"])
        w.writerows(records)
    return records
