"""End-to-end CAD run: cohort -> bed removal -> projection -> scoring -> ensemble.

One :func:`run_pipeline` call takes a cohort of CT volumes (generating a
phantom cohort first if asked to), strips the patient bed, optionally
resamples to an isotropic grid, projects every view angle, scores each view,
combines the per-view votes under an N/A rule, and writes metric tables plus
stratified cross-validation summaries. Every intermediate artifact lands on
disk, so any stage can be re-run or audited from files alone:

    out_dir/
      geometry.json                    projection geometry actually used
      patients/<pid>/
        subject.json(.raw)             bed-stripped volume
        bed_mask.json(.raw)            subject mask from bed removal
        subject_iso.json(.raw)         only when resampling is enabled
        proj_<tag>.pgm(+.json)         raw line integrals, 16-bit + scale
        mask_<tag>.pgm                 projected lung silhouette (> 1 mm path)
        band_<tag>.pgm                 scoring band (near-full lung path,
                                       minus an 8 mm edge guard)
        display_<tag>.pgm              8-bit radiograph-style rendering
        act_<tag>.bin, overlay_<tag>.ppm
      predictions.csv                  per-view scores (interchange format)
      decisions.csv, decisions_baseline.csv
      metrics.csv, sweep.csv, folds.csv, cv.csv, run_report.json

<tag> is the signed view angle, e.g. ``proj_-60.pgm``, ``proj_+0.pgm``.

Reports are deterministic byte-for-byte for a fixed config and seed. The
``DTSFORGE_THREADS`` environment variable caps patient-level parallelism
(default 1); results do not depend on the worker count.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import ndimage

from .bed import BedRemovalConfig, strip_bed
from .cam import ActivationMap, align_mask, refine, render_overlay, save_activation
from .ensemble import (EnsembleRule, ViewPrediction, decide, ingest_predictions,
                       sweep_a, threshold_scorer, write_predictions)
from .imgio import write_mask_pgm, write_pgm8, write_pgm16_scaled, write_ppm
from .metrics import confusion, fmt_metric, metrics, stratified_folds
from .phantom import generate_cohort
from .projection import (ProjectionGeometry, project_all_views, project_thickness,
                         save_geometry, to_display)
from .volume import (BinaryVolume, CtVolume, load_mask_volume, load_volume,
                     resample_isotropic, save_mask_volume, save_volume)


class PipelineError(RuntimeError):
    """A pipeline stage failed; the message starts with the stage name."""


@dataclass
class PipelineConfig:
    """Everything one end-to-end run needs; JSON-friendly via ``from_dict``.

    ``scorer`` selects where per-view predictions come from: ``"threshold"``
    runs the built-in attenuation scorer on freshly projected views, while
    ``"external-preds"`` ingests an interchange CSV (``preds_file``) produced
    elsewhere and only runs the ensemble/metrics stages.
    """

    cohort_dir: str = "cohort"
    out_dir: str = "run"
    n_normal: int = 0            # used only when the cohort must be generated
    n_abnormal: int = 0
    style: str = "ellipsoid"     # phantom family when generating
    seed: int = 0
    bed: BedRemovalConfig = field(default_factory=BedRemovalConfig)
    geometry: ProjectionGeometry = field(default_factory=ProjectionGeometry)
    rule: EnsembleRule = field(default_factory=lambda: EnsembleRule(n=5, a=2))
    scorer: str = "threshold"
    preds_file: str | None = None
    cutoff: float = 0.3
    resample_mm: float | None = None   # isotropic pitch; None keeps native grid
    band_fraction: float = 0.9  # of the per-view maximum lung path
    band_guard_mm: float = 8.0  # rim shaved off the band, in detector mm
    folds: int = 3
    write_displays: bool = True
    write_volumes: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        kw = dict(d)
        unknown = set(kw) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "bed" in kw:
            kw["bed"] = BedRemovalConfig(**kw["bed"])
        if "geometry" in kw:
            g = dict(kw["geometry"])
            for name in ("detector_mm", "detector_px", "view_angles_deg"):
                if name in g:
                    g[name] = tuple(g[name])
            kw["geometry"] = ProjectionGeometry(**g)
        if "rule" in kw:
            kw["rule"] = EnsembleRule(**kw["rule"])
        return cls(**kw)


def _angle_tag(angle_deg: float) -> str:
    return f"{angle_deg:+g}"


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("DTSFORGE_THREADS", "1")))
    except ValueError:
        return 1


def _read_truth(path: Path) -> dict:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"patient_id", "label"}.issubset(reader.fieldnames):
                raise ValueError("truth CSV needs a patient_id,label header")
            out: dict = {}
            for rec in reader:
                pid = rec["patient_id"]
                if pid in out:
                    raise ValueError(f"duplicate patient {pid!r} in truth file")
                label = int(rec["label"])
                if label not in (0, 1):
                    raise ValueError(f"patient {pid!r} has non-binary label {label}")
                out[pid] = label
    except OSError as e:
        raise ValueError(f"cannot read truth file {path}: {e}") from e
    if not out:
        raise ValueError(f"truth file {path} lists no patients")
    return out


def _read_pred_rows(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append((rec["patient_id"], float(rec["view_angle_deg"]),
                         float(rec["prob_abnormal"]), int(rec["label"])))
    return rows


def _resample_mask(mask: BinaryVolume, target_mm: float) -> BinaryVolume:
    soft = resample_isotropic(mask.as_volume(inside_hu=1.0, outside_hu=0.0), target_mm)
    return BinaryVolume((soft.values >= 0.5).astype(np.uint8), soft.spacing, soft.origin)


def _band_mask(thickness: np.ndarray, band_fraction: float,
               guard_px: int = 0) -> np.ndarray:
    """Pixels whose lung path is within ``band_fraction`` of the view maximum.

    Rays near the per-view maximum cross the lung's full depth, where the
    background each pixel sees is as uniform as this geometry allows; partial
    chords at the outline would swamp a fixed cutoff with their own spread.
    Even on the kept side of the path threshold, the outermost rim trades a
    tenth of the lung for soft tissue and its excess rivals the cutoff, so a
    physical guard margin (``guard_px``, from ``band_guard_mm``) is eroded
    away; finer detectors sample that rim where coarse ones step over it.
    """
    peak = float(thickness.max())
    if peak <= 0.0:
        return np.zeros(thickness.shape, dtype=np.uint8)
    band = thickness >= band_fraction * peak
    if guard_px > 0 and band.any():
        yy, xx = np.mgrid[-guard_px:guard_px + 1, -guard_px:guard_px + 1]
        band = ndimage.binary_erosion(band, np.hypot(yy, xx) <= guard_px)
    return band.astype(np.uint8)


def _process_patient(cfg: PipelineConfig, pid: str, cohort_dir: Path,
                     out_root: Path) -> list:
    """All per-patient stages; returns the per-view predictions."""
    pat_dir = out_root / "patients" / pid
    pat_dir.mkdir(parents=True, exist_ok=True)

    def stage(name, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except PipelineError:
            raise
        except Exception as e:
            raise PipelineError(f"{name}[{pid}]: {e}") from e

    volume = stage("load", load_volume, cohort_dir / f"{pid}.json")

    def _strip():
        subject, bed_mask = strip_bed(volume, cfg.bed)
        if cfg.write_volumes:
            save_volume(subject, pat_dir / "subject.json")
            save_mask_volume(bed_mask, pat_dir / "bed_mask.json")
        return subject

    subject = stage("strip-bed", _strip)

    lung_path = cohort_dir / f"{pid}_lung.json"
    lung = stage("load", load_mask_volume, lung_path) if lung_path.exists() else None

    if cfg.resample_mm is not None:
        def _resample():
            nonlocal subject, lung
            subject = resample_isotropic(subject, cfg.resample_mm)
            if cfg.write_volumes:
                save_volume(subject, pat_dir / "subject_iso.json")
            if lung is not None:
                lung = _resample_mask(lung, cfg.resample_mm)
        stage("resample", _resample)

    views = stage("project", project_all_views, subject, cfg.geometry)
    pitch = cfg.geometry.detector_mm[0] / cfg.geometry.detector_px[0]
    guard_px = int(round(cfg.band_guard_mm / pitch))
    bands = {}
    for p in views:
        tag = _angle_tag(p.view_angle_deg)
        stage("project", write_pgm16_scaled, pat_dir / f"proj_{tag}.pgm", p.pixels)
        if lung is not None:
            thick = stage("project-mask", project_thickness, lung, cfg.geometry,
                          p.view_angle_deg)
            band = _band_mask(thick, cfg.band_fraction, guard_px)
            bands[p.view_angle_deg] = band
            stage("project-mask", write_mask_pgm, pat_dir / f"mask_{tag}.pgm",
                  thick > 1.0)
            stage("project-mask", write_mask_pgm, pat_dir / f"band_{tag}.pgm", band)

    preds = []
    for p in views:
        pred = stage("score", threshold_scorer, p, cfg.cutoff,
                     lung_mask=bands.get(p.view_angle_deg), patient_id=pid)
        preds.append(pred)

    if cfg.write_displays:
        def _render():
            for p in views:
                tag = _angle_tag(p.view_angle_deg)
                disp = to_display(p, out_px=cfg.geometry.detector_px)
                write_pgm8(pat_dir / f"display_{tag}.pgm", disp)
                band = bands.get(p.view_angle_deg)
                region = band > 0 if band is not None else p.pixels > 0
                if not region.any():
                    # guard erosion can empty the band on a coarse detector;
                    # still emit the artifacts, anchored on the whole image
                    region = p.pixels > 0
                if not region.any():
                    continue
                # scorer's own evidence as a 1-channel activation analogue
                excess = p.pixels - float(np.median(p.pixels[region]))
                act = ActivationMap(np.maximum(excess, 0.0)[:, :, None].astype(np.float32),
                                    patient_id=pid, view_angle_deg=p.view_angle_deg)
                if band is not None:
                    act = refine(act, align_mask(band, act.h, act.w))
                save_activation(pat_dir / f"act_{tag}.bin", act)
                overlay = render_overlay(act, disp,
                                         mask=align_mask(band, *disp.shape).pixels
                                         if band is not None else None)
                write_ppm(pat_dir / f"overlay_{tag}.ppm", overlay)
        stage("render", _render)
    return preds


def _rule_metrics(preds: dict, truth: dict):
    return metrics(confusion(preds, truth))


_METRIC_COLS = ("accuracy", "sensitivity", "specificity", "precision", "f1")


def _cv_aggregate(reports) -> dict:
    """Per-metric mean and population std across folds.

    Unlike :func:`dtsforge.metrics.aggregate`, a metric that is undefined in
    any fold is summarized as undefined instead of failing the run; one
    all-negative fold should not take the whole report down.
    """
    out = {}
    for name in _METRIC_COLS:
        vals = [getattr(rep, name) for rep in reports]
        if any(v is None for v in vals):
            out[name] = (None, None)
        else:
            arr = np.asarray(vals, dtype=float)
            out[name] = (float(arr.mean()), float(arr.std()))
    return out


def _report_row(rep) -> list:
    return [fmt_metric(getattr(rep, name), digits=4) for name in _METRIC_COLS]


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Run every stage; returns the report dict also written as JSON.

    Raises :class:`PipelineError` naming the failing stage. With
    ``scorer="external-preds"`` the imaging stages are skipped and
    ``cfg.preds_file`` supplies the per-view predictions.
    """
    cohort_dir = Path(cfg.cohort_dir)
    out_root = Path(cfg.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)

    if cfg.scorer not in ("threshold", "external-preds"):
        raise PipelineError(f"config: unknown scorer {cfg.scorer!r}")
    n_views = cfg.geometry.n_views
    if cfg.rule.n != n_views:
        raise PipelineError(f"config: rule is over n={cfg.rule.n} views but the "
                            f"geometry defines {n_views}")
    if 0.0 not in tuple(cfg.geometry.view_angles_deg):
        raise PipelineError("config: the frontal (0 deg) view is required as baseline")

    truth_path = cohort_dir / "truth.csv"
    if not truth_path.exists():
        if cfg.n_normal + cfg.n_abnormal <= 0:
            raise PipelineError(f"cohort: {truth_path} not found and no "
                                "generation counts configured")
        try:
            generate_cohort(cfg.n_normal, cfg.n_abnormal, cfg.seed, cohort_dir,
                            style=cfg.style)
        except Exception as e:
            raise PipelineError(f"cohort: {e}") from e
    try:
        truth = _read_truth(truth_path)
    except Exception as e:
        raise PipelineError(f"cohort: {e}") from e

    preds_path = out_root / "predictions.csv"
    if cfg.scorer == "threshold":
        save_geometry(cfg.geometry, out_root / "geometry.json")
        pids = sorted(truth)
        workers = _worker_count()
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(
                    lambda pid: _process_patient(cfg, pid, cohort_dir, out_root), pids))
        else:
            results = [_process_patient(cfg, pid, cohort_dir, out_root) for pid in pids]
        all_preds = [p for patient in results for p in
                     sorted(patient, key=lambda q: q.view_angle_deg)]
        try:
            write_predictions(all_preds, preds_path, cutoff=cfg.cutoff)
        except Exception as e:
            raise PipelineError(f"score: {e}") from e
    else:
        if not cfg.preds_file:
            raise PipelineError("config: scorer 'external-preds' needs preds_file")
        preds_path = Path(cfg.preds_file)

    try:
        votes = ingest_predictions(preds_path)
        rows = _read_pred_rows(preds_path)
    except Exception as e:
        raise PipelineError(f"ensemble: {e}") from e
    if set(votes) != set(truth):
        missing = sorted(set(truth) - set(votes))
        extra = sorted(set(votes) - set(truth))
        raise PipelineError(f"ensemble: prediction/truth patient sets differ "
                            f"(missing {missing}, extra {extra})")
    file_angles = sorted({ang for _, ang, _, _ in rows})
    if len(file_angles) != cfg.rule.n:
        raise PipelineError(f"ensemble: {len(file_angles)} view angles in "
                            f"predictions but rule expects n={cfg.rule.n}")
    if 0.0 not in file_angles:
        raise PipelineError("ensemble: no frontal (0 deg) predictions for baseline")

    ens_preds = {pid: int(decide(v, cfg.rule)) for pid, v in votes.items()}
    base_preds = {pid: 0 for pid in votes}
    for pid, ang, _, label in rows:
        if ang == 0.0:
            base_preds[pid] = label

    def _write_decisions(path, preds):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["patient_id", "label"])
            for pid in sorted(preds):
                w.writerow([pid, preds[pid]])

    try:
        _write_decisions(out_root / "decisions.csv", ens_preds)
        _write_decisions(out_root / "decisions_baseline.csv", base_preds)

        rule_name = f"{cfg.rule.n}/{cfg.rule.a}"
        ens_rep = _rule_metrics(ens_preds, truth)
        base_rep = _rule_metrics(base_preds, truth)
        with open(out_root / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rule", *_METRIC_COLS])
            w.writerow(["1/1 (frontal)", *_report_row(base_rep)])
            w.writerow([rule_name, *_report_row(ens_rep)])

        with open(out_root / "sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["a", *_METRIC_COLS, "mean_sens_spec"])
            for row in sweep_a(votes, truth, cfg.rule.n):
                w.writerow([row.a, *_report_row(row.report),
                            fmt_metric(row.mean_sens_spec, digits=4)])
    except PipelineError:
        raise
    except Exception as e:
        raise PipelineError(f"metrics: {e}") from e

    try:
        assignment = stratified_folds(sorted(truth.items()), k=cfg.folds, seed=cfg.seed)
        with open(out_root / "folds.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["patient_id", "label", "fold"])
            for pid in sorted(truth):
                w.writerow([pid, truth[pid], assignment.assignment[pid]])

        cv_summary = {}
        with open(out_root / "cv.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rule", "fold", *_METRIC_COLS])
            for name, preds in (("1/1 (frontal)", base_preds), (rule_name, ens_preds)):
                reports = []
                for i in range(cfg.folds):
                    fold_ids = assignment.fold_ids(i)
                    rep = _rule_metrics({pid: preds[pid] for pid in fold_ids},
                                        {pid: truth[pid] for pid in fold_ids})
                    reports.append(rep)
                    w.writerow([name, i, *_report_row(rep)])
                agg = _cv_aggregate(reports)
                for stat, pick in (("mean", 0), ("std", 1)):
                    w.writerow([name, stat,
                                *(fmt_metric(agg[m][pick], digits=4)
                                  for m in _METRIC_COLS)])
                cv_summary[name] = {m: agg[m][0] for m in _METRIC_COLS}
    except PipelineError:
        raise
    except Exception as e:
        raise PipelineError(f"cross-validation: {e}") from e

    report = {
        "patients": len(truth),
        "abnormal": int(sum(truth.values())),
        "normal": int(len(truth) - sum(truth.values())),
        "view_angles_deg": file_angles,
        "rule": rule_name,
        "cutoff": cfg.cutoff,
        "seed": cfg.seed,
        "scorer": cfg.scorer,
        "metrics": {
            "1/1 (frontal)": {m: getattr(base_rep, m) for m in _METRIC_COLS},
            rule_name: {m: getattr(ens_rep, m) for m in _METRIC_COLS},
        },
        "cv_mean": cv_summary,
    }
    (out_root / "run_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report
