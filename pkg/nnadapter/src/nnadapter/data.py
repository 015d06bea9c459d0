"""Run-directory discovery, image preparation, and the interchange writers.

The only coupling to the projection pipeline is its files: per-patient
directories holding ``display_<tag>.pgm`` renderings and ``mask_<tag>.pgm``
lung silhouettes (tag = signed view angle, e.g. ``+0``, ``-30``), a
``truth.csv`` with ``patient_id,label`` rows, and three export formats
written back --

    predictions CSV   patient_id,view_angle_deg,prob_abnormal,label,cutoff
    activation .bin   one JSON header line {h,w,c,patient_id,view_angle_deg}
                      then row-major little-endian float32, h*w*c values
    mask PGM          8-bit binary P5, foreground 255

Nothing in this package imports the pipeline package; the formats above are
the whole contract.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageOps


def angle_tag(angle_deg: float) -> str:
    return f"{angle_deg:+g}"


def parse_tag(tag: str) -> float:
    return float(tag)


def read_truth(path) -> dict:
    """patient_id -> 0/1 label from a truth.csv."""
    out: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"patient_id", "label"}
        if reader.fieldnames is None or not need.issubset(reader.fieldnames):
            raise ValueError(f"{path}: needs columns patient_id,label")
        for rec in reader:
            pid = rec["patient_id"]
            if pid in out:
                raise ValueError(f"{path}: duplicate patient {pid!r}")
            out[pid] = int(rec["label"])
    if not out:
        raise ValueError(f"{path}: no patients")
    return out


@dataclass(frozen=True)
class ViewSample:
    patient_id: str
    view_angle_deg: float
    image: Path
    mask: Path | None  # paired lung silhouette, when the run wrote one


def discover_views(run_dir, angles=None) -> dict:
    """Map view angle -> [ViewSample ...] over a pipeline run directory.

    Patients are the subdirectories containing display images.  Every
    patient must cover every requested angle (default: the union seen in
    the run); a gap is a hard error naming the culprit.
    """
    run_dir = Path(run_dir)
    if (run_dir / "patients").is_dir():
        run_dir = run_dir / "patients"
    patients = {}
    for d in sorted(p for p in run_dir.iterdir() if p.is_dir()):
        found = {}
        for f in d.glob("display_*.pgm"):
            try:
                ang = parse_tag(f.stem[len("display_"):])
            except ValueError:
                continue
            found[ang] = f
        if found:
            patients[d.name] = found
    if not patients:
        raise ValueError(f"{run_dir}: no per-patient display images found")
    want = (sorted({a for f in patients.values() for a in f})
            if angles is None else sorted(float(a) for a in angles))
    out: dict = {a: [] for a in want}
    for pid in sorted(patients):
        for ang in want:
            if ang not in patients[pid]:
                raise ValueError(f"{run_dir}: patient {pid!r} has no display "
                                 f"for view angle {ang:g}")
            img = patients[pid][ang]
            mask = img.with_name(f"mask_{angle_tag(ang)}.pgm")
            out[ang].append(ViewSample(pid, ang, img,
                                       mask if mask.exists() else None))
    return out


# ---------------------------------------------------------------- images

def read_gray(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"))
    if arr.ndim != 2:
        raise ValueError(f"{path}: expected a 2D grayscale image")
    return arr


def prepare_image(path, size: int) -> torch.Tensor:
    """Display PGM -> (1, size, size) float tensor in [-1, 1].

    Resize first, then histogram-equalize on the model grid.
    """
    img = Image.open(path).convert("L").resize((size, size), Image.BILINEAR)
    img = ImageOps.equalize(img)
    x = np.asarray(img, dtype=np.float32) / 255.0
    return torch.from_numpy((x - 0.5) / 0.5)[None]


def prepare_mask(path, size: int) -> torch.Tensor:
    """Mask PGM -> (size, size) long tensor of {0, 1}."""
    img = Image.open(path).convert("L").resize((size, size), Image.NEAREST)
    return torch.from_numpy((np.asarray(img) > 127).astype(np.int64))


def write_mask(path, mask: np.ndarray):
    mask = np.asarray(mask)
    if np.setdiff1d(np.unique(mask), [0, 1]).size:
        raise ValueError("mask must be 0/1")
    Image.fromarray((mask * 255).astype(np.uint8), "L").save(path)


def resize_mask_to(mask: np.ndarray, shape) -> np.ndarray:
    h, w = shape
    img = Image.fromarray((np.asarray(mask) * 255).astype(np.uint8), "L")
    return (np.asarray(img.resize((w, h), Image.NEAREST)) > 127).astype(np.uint8)


# -------------------------------------------------------------- exports

def write_predictions(rows, path, cutoff: float):
    """rows: iterable of (patient_id, view_angle_deg, prob_abnormal, label)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patient_id", "view_angle_deg", "prob_abnormal", "label",
                    "cutoff"])
        for pid, ang, prob, label in rows:
            w.writerow([pid, f"{ang:g}", f"{prob:.6f}", int(label),
                        f"{cutoff:g}"])


def write_activation(path, values: np.ndarray, patient_id: str,
                     view_angle_deg: float):
    values = np.asarray(values, dtype=np.float32)
    if values.ndim != 3:
        raise ValueError("activation payload must be (h, w, c)")
    if not np.isfinite(values).all():
        raise ValueError("activation payload must be finite")
    h, w, c = values.shape
    header = {"h": h, "w": w, "c": c, "patient_id": patient_id,
              "view_angle_deg": float(view_angle_deg)}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("ascii") + b"\n")
        fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())
