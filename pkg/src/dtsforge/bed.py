"""Scanner-bed removal for chest CT volumes.

Works slice by slice on axial planes: threshold out air, clean the binary
mask with a median blur and a morphological opening, keep the largest
8-connected region with its holes filled, and blank everything outside it to
air. The bed (a detached arc posterior to the patient) never wins the
largest-region vote as long as the subject's cross-section dominates, so it
vanishes from every slice.

Kernel sizes are in voxels and sized for near-isotropic CT grids of a couple
of millimetres; on much coarser grids the opening can breach a thin chest
wall and the lung behind it stops counting as a fillable hole.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import CtVolume, BinaryVolume, AIR_HU

_EIGHT = np.ones((3, 3), dtype=np.uint8)


@dataclass(frozen=True)
class BedRemovalConfig:
    threshold_hu: float = -500.0
    median_kernel: int = 5
    erode_radius: int = 2
    dilate_radius: int = 2

    def __post_init__(self):
        if self.median_kernel < 1 or self.median_kernel % 2 == 0:
            raise ValueError("median_kernel must be odd and positive")
        if self.erode_radius < 0 or self.dilate_radius < 0:
            raise ValueError("morphology radii must be non-negative")


DEFAULT_CONFIG = BedRemovalConfig()


def threshold_slice(slice_hu: np.ndarray, cfg: BedRemovalConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Binary foreground: everything at least as dense as the threshold."""
    return (slice_hu >= cfg.threshold_hu).astype(np.uint8)


def denoise_binary(mask: np.ndarray, cfg: BedRemovalConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Median blur then square-kernel erosion and dilation, replicate-edge padded."""
    out = ndimage.median_filter(mask, size=cfg.median_kernel, mode="nearest")
    # grey ops on {0,1} are binary morphology but honor the edge padding mode
    if cfg.erode_radius:
        k = 2 * cfg.erode_radius + 1
        out = ndimage.grey_erosion(out, size=(k, k), mode="nearest")
    if cfg.dilate_radius:
        k = 2 * cfg.dilate_radius + 1
        out = ndimage.grey_dilation(out, size=(k, k), mode="nearest")
    return out.astype(np.uint8)


def largest_component_mask(mask: np.ndarray) -> np.ndarray:
    """Hole-filled 8-connected component of maximal filled area.

    Candidates are compared after hole filling, so a hollow region beats a
    slightly larger solid one if its filled interior wins. Empty input gives
    an empty mask.
    """
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return np.zeros_like(mask, dtype=np.uint8)
    filled = ndimage.binary_fill_holes(mask)
    # hole filling cannot merge components, so filled pixels inherit labels
    flabels, _ = ndimage.label(filled, structure=_EIGHT)
    sizes = np.bincount(flabels.ravel())
    sizes[0] = 0
    owner = flabels == int(np.argmax(sizes))
    return owner.astype(np.uint8)


def subject_mask(volume: CtVolume, cfg: BedRemovalConfig = DEFAULT_CONFIG) -> BinaryVolume:
    """Per-slice subject segmentation of a CT volume (bed excluded)."""
    vals = volume.values
    out = np.empty(vals.shape, dtype=np.uint8)
    for k in range(vals.shape[0]):
        m = threshold_slice(vals[k], cfg)
        m = denoise_binary(m, cfg)
        out[k] = largest_component_mask(m)
    return BinaryVolume(out, volume.spacing, volume.origin)


def strip_bed(volume: CtVolume, cfg: BedRemovalConfig = DEFAULT_CONFIG):
    """Blank everything outside the per-slice subject region to air.

    Returns ``(stripped_volume, mask)``. Voxels outside the mask are set to
    air HU rather than zero so they stay radiolucent in later projections.
    """
    mask = subject_mask(volume, cfg)
    vals = volume.values.copy()
    vals[mask.values == 0] = AIR_HU
    return CtVolume(vals, volume.spacing, volume.origin), mask
