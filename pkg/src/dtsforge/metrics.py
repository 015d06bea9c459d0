"""Binary classification metrics, segmentation overlap, and the CV harness.

Zero-denominator metrics are reported as None (rendered "n/a" in tables)
rather than raising or inventing a value. Fold aggregation uses the
population standard deviation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

UNDEFINED_MARK = "n/a"


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class MetricReport:
    accuracy: float | None
    sensitivity: float | None
    specificity: float | None
    precision: float | None
    f1: float | None

    def as_dict(self):
        return {"accuracy": self.accuracy, "sensitivity": self.sensitivity,
                "specificity": self.specificity, "precision": self.precision,
                "f1": self.f1}


def fmt_metric(value: float | None, digits: int = 3) -> str:
    return UNDEFINED_MARK if value is None else f"{value:.{digits}f}"


def confusion(preds: Mapping[str, int], truth: Mapping[str, int]) -> ConfusionMatrix:
    """Tally predictions against truth; patient sets must match exactly."""
    if set(preds) != set(truth):
        missing = sorted(set(truth) - set(preds))
        extra = sorted(set(preds) - set(truth))
        raise ValueError(f"patient sets differ (missing {missing}, extra {extra})")
    tp = tn = fp = fn = 0
    for pid, t in truth.items():
        p = preds[pid]
        if p not in (0, 1) or t not in (0, 1):
            raise ValueError(f"non-binary label for {pid!r}")
        if t == 1:
            tp, fn = (tp + 1, fn) if p == 1 else (tp, fn + 1)
        else:
            tn, fp = (tn + 1, fp) if p == 0 else (tn, fp + 1)
    return ConfusionMatrix(tp, tn, fp, fn)


def _ratio(num: int, den: int) -> float | None:
    return num / den if den > 0 else None


def f1_score(precision: float | None, sensitivity: float | None) -> float | None:
    """Harmonic mean of precision and sensitivity; None if either is, or both 0."""
    if precision is None or sensitivity is None or precision + sensitivity == 0:
        return None
    return 2.0 * precision * sensitivity / (precision + sensitivity)


def metrics(c: ConfusionMatrix) -> MetricReport:
    if c.total == 0:
        raise ValueError("empty confusion matrix")
    sens = _ratio(c.tp, c.tp + c.fn)
    spec = _ratio(c.tn, c.tn + c.fp)
    prec = _ratio(c.tp, c.tp + c.fp)
    return MetricReport(accuracy=(c.tp + c.tn) / c.total, sensitivity=sens,
                        specificity=spec, precision=prec,
                        f1=f1_score(prec, sens))


def aggregate(reports: Sequence[MetricReport]):
    """Per-metric (mean, population std) across fold reports.

    All reports must agree on which metrics are defined; a metric undefined
    everywhere aggregates to (None, None).
    """
    if not reports:
        raise ValueError("no reports to aggregate")
    out = {}
    for name in ("accuracy", "sensitivity", "specificity", "precision", "f1"):
        vals = [getattr(r, name) for r in reports]
        defined = [v is not None for v in vals]
        if any(defined) != all(defined):
            raise ValueError(f"{name} defined in some folds but not others")
        if not any(defined):
            out[name] = (None, None)
        else:
            arr = np.asarray(vals, dtype=np.float64)
            out[name] = (float(arr.mean()), float(arr.std()))
    return out


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    seed: int
    assignment: dict    # patient_id -> fold index
    labels: dict        # patient_id -> stratification label

    def fold_ids(self, i: int) -> list:
        return sorted(pid for pid, f in self.assignment.items() if f == i)

    def class_counts(self):
        """counts[fold][label] for the balance invariant."""
        out = [{} for _ in range(self.k)]
        for pid, f in self.assignment.items():
            lbl = self.labels[pid]
            out[f][lbl] = out[f].get(lbl, 0) + 1
        return out


def stratified_folds(patients: Sequence[tuple], k: int, seed: int) -> FoldAssignment:
    """Deterministic stratified k-fold split.

    Each label class is shuffled with its own slice of the seeded generator
    and dealt round-robin, so per-class fold counts differ by at most one.
    """
    if k < 1:
        raise ValueError("k must be positive")
    ids = [pid for pid, _ in patients]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate patient ids")
    labels = dict(patients)
    by_label: dict = {}
    for pid, lbl in patients:
        by_label.setdefault(lbl, []).append(pid)
    for lbl, members in by_label.items():
        if len(members) < k:
            raise ValueError(f"class {lbl!r} has {len(members)} members < k={k}")
    rng = np.random.default_rng(seed)
    assignment = {}
    for lbl in sorted(by_label, key=str):
        members = sorted(by_label[lbl])
        order = rng.permutation(len(members))
        for slot, idx in enumerate(order):
            assignment[members[idx]] = slot % k
    return FoldAssignment(k=k, seed=seed, assignment=assignment, labels=labels)


def seg_overlap(pred, ref) -> tuple[float, float]:
    """(jaccard, dice) for two binary masks; two empty masks count as perfect."""
    a = np.asarray(getattr(pred, "pixels", pred))
    b = np.asarray(getattr(ref, "pixels", ref))
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    for m in (a, b):
        if np.setdiff1d(np.unique(m), [0, 1]).size:
            raise ValueError("masks must be 0/1")
    inter = int(np.logical_and(a, b).sum())
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 1.0, 1.0
    jac = inter / union
    return jac, 2.0 * inter / (int(a.sum()) + int(b.sum()))
