"""Per-view score combination: the at-least-A-of-N positive vote rule.

A patient with N per-view binary predictions is called positive when the
count K of positive views reaches the threshold A; sweeping A trades
sensitivity against specificity. Majority voting is the special case
A = floor(N/2) + 1 (ties on even N resolve negative).

Prediction interchange is a CSV with header
``patient_id,view_angle_deg,prob_abnormal,label,cutoff`` so the decision
cutoff always travels with the data.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from . import metrics as _metrics
from .projection import ProjectionImage


@dataclass(frozen=True)
class EnsembleRule:
    n: int
    a: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one view")
        if not (1 <= self.a <= self.n):
            raise ValueError(f"vote threshold a={self.a} outside [1, {self.n}]")


@dataclass(frozen=True)
class ViewPrediction:
    patient_id: str
    view_angle_deg: float
    prob_abnormal: float
    label: int

    def __post_init__(self):
        if not (0.0 <= self.prob_abnormal <= 1.0):
            raise ValueError("prob_abnormal outside [0, 1]")
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")


@dataclass(frozen=True)
class VoteVector:
    patient_id: str
    votes: tuple    # 0/1 per view, ordered by ascending view angle

    def __post_init__(self):
        if any(v not in (0, 1) for v in self.votes):
            raise ValueError("votes must be 0/1")

    @property
    def k(self) -> int:
        return int(sum(self.votes))


def decide(v: VoteVector, rule: EnsembleRule) -> bool:
    """True (positive) iff at least ``rule.a`` of the ``rule.n`` views voted 1."""
    if len(v.votes) != rule.n:
        raise ValueError(f"{v.patient_id}: {len(v.votes)} votes for an n={rule.n} rule")
    return v.k >= rule.a


def majority_vote(v: VoteVector) -> bool:
    """Strict majority; an even-vote tie counts as negative."""
    n = len(v.votes)
    return decide(v, EnsembleRule(n=n, a=n // 2 + 1))


def write_predictions(preds: Sequence[ViewPrediction], path, cutoff: float = 0.5):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patient_id", "view_angle_deg", "prob_abnormal", "label", "cutoff"])
        for p in preds:
            w.writerow([p.patient_id, f"{p.view_angle_deg:g}",
                        f"{p.prob_abnormal:.6f}", p.label, f"{cutoff:g}"])


def ingest_predictions(path) -> dict:
    """Read a prediction CSV into per-patient VoteVectors.

    Every patient must cover the same set of view angles (the union seen in
    the file); duplicates and gaps are hard errors naming the culprit.
    """
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"patient_id", "view_angle_deg", "prob_abnormal", "label", "cutoff"}
        if reader.fieldnames is None or not need.issubset(reader.fieldnames):
            raise ValueError(f"{path}: missing header fields "
                             f"{sorted(need - set(reader.fieldnames or []))}")
        for rec in reader:
            rows.append((rec["patient_id"], float(rec["view_angle_deg"]),
                         int(rec["label"])))
    seen: dict = {}
    for pid, ang, label in rows:
        views = seen.setdefault(pid, {})
        if ang in views:
            raise ValueError(f"{path}: duplicate record for patient {pid!r} angle {ang:g}")
        views[ang] = label
    angles = sorted({ang for _, ang, _ in rows})
    out = {}
    for pid in sorted(seen):
        for ang in angles:
            if ang not in seen[pid]:
                raise ValueError(f"{path}: patient {pid!r} missing view angle {ang:g}")
        out[pid] = VoteVector(pid, tuple(seen[pid][a] for a in angles))
    return out


@dataclass(frozen=True)
class SweepRow:
    a: int
    report: _metrics.MetricReport
    mean_sens_spec: float | None


def sweep_a(votes: Mapping[str, VoteVector], truth: Mapping[str, int], n: int):
    """Evaluate the vote rule for every A in [1, n] against patient truth."""
    if set(votes) != set(truth):
        raise ValueError("vote and truth patient sets differ")
    rows = []
    for a in range(1, n + 1):
        rule = EnsembleRule(n=n, a=a)
        preds = {pid: int(decide(v, rule)) for pid, v in votes.items()}
        rep = _metrics.metrics(_metrics.confusion(preds, truth))
        if rep.sensitivity is None or rep.specificity is None:
            mss = None
        else:
            mss = 0.5 * (rep.sensitivity + rep.specificity)
        rows.append(SweepRow(a=a, report=rep, mean_sens_spec=mss))
    return rows


def _disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (yy * yy + xx * xx) <= r * r


def threshold_scorer(p: ProjectionImage, cutoff: float, lung_mask=None, *,
                     positive_fraction: float = 0.005, opaque_excess: float = 0.9,
                     opaque_margin_px: int = 8, patient_id: str = "") -> ViewPrediction:
    """Score one view by counting in-lung pixels with excess attenuation.

    Pixel excess is measured against the median in-lung integral. Pixels
    whose excess tops ``opaque_excess`` are treated as radiopaque — a dense
    structure nothing can be read through — and dropped from consideration
    together with a safety margin of ``opaque_margin_px`` around them, which
    is what makes a lesion hiding behind dense anatomy invisible in that
    view. The reported probability is the flagged fraction rescaled so that
    ``positive_fraction`` of flagged pixels sits exactly at the 0.5 decision
    point; it saturates at 1.
    """
    vals = p.pixels
    if lung_mask is None:
        region = vals > 0
    else:
        m = np.asarray(getattr(lung_mask, "pixels", lung_mask))
        if m.shape != vals.shape:
            raise ValueError("lung mask shape differs from image")
        region = m > 0
    if not region.any():
        return ViewPrediction(patient_id, p.view_angle_deg, 0.0, 0)
    excess = vals - float(np.median(vals[region]))
    # opacity is judged over the whole image so a dense shadow just outside
    # the lung outline still masks the pixels it borders inside it
    opaque = excess > opaque_excess
    if opaque.any() and opaque_margin_px > 0:
        opaque = ndimage.binary_dilation(opaque, structure=_disk(opaque_margin_px))
    informative = region & ~opaque
    if not informative.any():
        return ViewPrediction(patient_id, p.view_angle_deg, 0.0, 0)
    frac = float(np.mean(excess[informative] > cutoff))
    if positive_fraction <= 0:
        raise ValueError("positive_fraction must be positive")
    prob = min(1.0, 0.5 * frac / positive_fraction)
    return ViewPrediction(patient_id, p.view_angle_deg, prob, int(prob >= 0.5))
