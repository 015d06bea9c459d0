"""Command-line front end: one subcommand per pipeline stage plus ``pipeline``.

Stages read and write only documented file formats (volume header+raw, PGM,
prediction/truth CSV, activation binaries), so any stage can be replayed from
the artifacts of the previous one. ``DTSFORGE_THREADS`` caps patient-level
parallelism in ``pipeline``; every command that draws random numbers takes
``--seed``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .bed import BedRemovalConfig, strip_bed
from .cam import align_mask, load_activation, refine, render_overlay, save_activation
from .ensemble import (EnsembleRule, decide, ingest_predictions, sweep_a,
                       threshold_scorer, write_predictions)
from .imgio import (read_mask_pgm, read_pgm, read_pgm16_scaled, write_mask_pgm,
                    write_pgm8, write_pgm16_scaled, write_ppm)
from .metrics import confusion, fmt_metric, metrics, seg_overlap, stratified_folds
from .phantom import generate, generate_cohort, spec_from_dict
from .pipeline import PipelineConfig, PipelineError, run_pipeline, _read_truth
from .projection import (ProjectionGeometry, ProjectionImage, load_geometry,
                         project_all_views, project_binary_mask, save_geometry,
                         to_display)
from .volume import (load_mask_volume, load_volume, resample_isotropic,
                     save_mask_volume, save_volume)

_METRIC_COLS = ("accuracy", "sensitivity", "specificity", "precision", "f1")


def _fmt_report(rep) -> str:
    return "  ".join(f"{name}={fmt_metric(getattr(rep, name))}"
                     for name in _METRIC_COLS)


def _angle_tag(angle_deg: float) -> str:
    return f"{angle_deg:+g}"


def _load_geometry_arg(args) -> ProjectionGeometry:
    geo = load_geometry(args.geometry) if args.geometry else ProjectionGeometry()
    if getattr(args, "views", None):
        angles = tuple(float(t) for t in args.views.split(","))
        geo = dataclasses.replace(geo, view_angles_deg=angles)
    return geo


def _cmd_phantom(args) -> int:
    spec = spec_from_dict(json.loads(Path(args.spec).read_text()))
    spec.validate()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vol, subject, lung, label = generate(spec)
    save_volume(vol, out / f"{args.id}.json")
    save_mask_volume(subject, out / f"{args.id}_subject.json")
    save_mask_volume(lung, out / f"{args.id}_lung.json")
    print(f"{args.id}: dims={vol.dims} label={label}")
    return 0


def _cmd_phantom_cohort(args) -> int:
    records = generate_cohort(args.normal, args.abnormal, args.seed, args.out_dir,
                              style=args.style)
    n_abn = sum(label for _, label in records)
    print(f"wrote {len(records)} phantoms ({len(records) - n_abn} normal, "
          f"{n_abn} abnormal) to {args.out_dir}")
    return 0


def _cmd_strip_bed(args) -> int:
    cfg = BedRemovalConfig(threshold_hu=args.threshold, median_kernel=args.median,
                           erode_radius=args.erode, dilate_radius=args.dilate)
    subject, mask = strip_bed(load_volume(args.infile), cfg)
    save_volume(subject, args.out)
    if args.mask_out:
        save_mask_volume(mask, args.mask_out)
    print(f"subject voxels: {int(mask.values.sum())}")
    return 0


def _cmd_resample(args) -> int:
    iso = resample_isotropic(load_volume(args.infile), args.pitch)
    save_volume(iso, args.out)
    print(f"resampled to {iso.dims} at {args.pitch:g} mm")
    return 0


def _cmd_project(args) -> int:
    geo = _load_geometry_arg(args)
    volume = load_volume(args.infile)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_geometry(geo, out / "geometry.json")
    for p in project_all_views(volume, geo):
        tag = _angle_tag(p.view_angle_deg)
        write_pgm16_scaled(out / f"proj_{tag}.pgm", p.pixels)
        write_pgm8(out / f"display_{tag}.pgm", to_display(p, out_px=geo.detector_px))
    if args.mask_in:
        mask_dir = Path(args.mask_out_dir or out)
        mask_dir.mkdir(parents=True, exist_ok=True)
        lung = load_mask_volume(args.mask_in)
        for ang in geo.view_angles_deg:
            m = project_binary_mask(lung, geo, ang, min_path_mm=args.min_path)
            write_mask_pgm(mask_dir / f"mask_{_angle_tag(ang)}.pgm", m.pixels)
    print(f"projected {geo.n_views} views to {out}")
    return 0


def _cmd_project_mask(args) -> int:
    geo = _load_geometry_arg(args)
    lung = load_mask_volume(args.infile)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for ang in geo.view_angles_deg:
        m = project_binary_mask(lung, geo, ang, min_path_mm=args.min_path)
        write_mask_pgm(out / f"mask_{_angle_tag(ang)}.pgm", m.pixels)
    print(f"projected {geo.n_views} masks to {out}")
    return 0


def _cmd_score(args) -> int:
    geo = load_geometry(args.geometry) if args.geometry else ProjectionGeometry()
    pixels = read_pgm16_scaled(args.proj)
    p = ProjectionImage(pixels, args.angle, geo)
    mask = read_mask_pgm(args.mask) if args.mask else None
    pred = threshold_scorer(p, args.cutoff, lung_mask=mask, patient_id=args.patient)
    exists = Path(args.out).exists()
    mode = "a" if args.append and exists else "w"
    with open(args.out, mode, newline="") as fh:
        if mode == "w":
            fh.write("patient_id,view_angle_deg,prob_abnormal,label,cutoff\n")
        fh.write(f"{pred.patient_id},{pred.view_angle_deg:g},"
                 f"{pred.prob_abnormal:.6f},{pred.label},{args.cutoff:g}\n")
    print(f"{pred.patient_id} {pred.view_angle_deg:+g}: "
          f"prob={pred.prob_abnormal:.3f} label={pred.label}")
    return 0


def _cmd_ensemble(args) -> int:
    votes = ingest_predictions(args.preds)
    truth = _read_truth(Path(args.truth))
    rule = EnsembleRule(n=args.n, a=args.a)
    preds = {pid: int(decide(v, rule)) for pid, v in votes.items()}
    rep = metrics(confusion(preds, truth))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write("patient_id,label\n")
            for pid in sorted(preds):
                fh.write(f"{pid},{preds[pid]}\n")
    print(f"N/A={rule.n}/{rule.a}: {_fmt_report(rep)}")
    return 0


def _cmd_sweep_a(args) -> int:
    votes = ingest_predictions(args.preds)
    truth = _read_truth(Path(args.truth))
    print("a  " + "  ".join(_METRIC_COLS) + "  mean_sens_spec")
    for row in sweep_a(votes, truth, args.n):
        cells = [fmt_metric(getattr(row.report, name)) for name in _METRIC_COLS]
        print(f"{row.a}  " + "  ".join(cells) + f"  {fmt_metric(row.mean_sens_spec)}")
    return 0


def _cmd_metrics(args) -> int:
    preds = _read_truth(Path(args.preds))
    truth = _read_truth(Path(args.truth))
    c = confusion(preds, truth)
    rep = metrics(c)
    print(f"tp={c.tp} tn={c.tn} fp={c.fp} fn={c.fn}")
    print(_fmt_report(rep))
    return 0


def _cmd_seg_eval(args) -> int:
    jac, dice = seg_overlap(read_mask_pgm(args.pred), read_mask_pgm(args.ref))
    print(f"jaccard={jac:.4f} dice={dice:.4f}")
    return 0


def _cmd_folds(args) -> int:
    patients = sorted(_read_truth(Path(args.patients)).items())
    fa = stratified_folds(patients, k=args.k, seed=args.seed)
    lines = [f"{pid},{label},{fa.assignment[pid]}" for pid, label in patients]
    body = "patient_id,label,fold\n" + "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(body)
    else:
        sys.stdout.write(body)
    return 0


def _cmd_refine_cam(args) -> int:
    act = load_activation(args.act)
    mask = read_mask_pgm(args.mask)
    refined = refine(act, align_mask(mask, act.h, act.w))
    if args.act_out:
        save_activation(args.act_out, refined)
    base = read_pgm(args.base)
    if base.dtype != np.uint8:
        raise ValueError(f"{args.base}: expected an 8-bit display image")
    overlay = render_overlay(refined, base, channel_reduce=args.reduce,
                             mask=align_mask(mask, *base.shape).pixels)
    write_ppm(args.out, overlay)
    print(f"wrote {args.out}")
    return 0


def _cmd_pipeline(args) -> int:
    cfg_dict = json.loads(Path(args.config).read_text()) if args.config else {}
    overrides = {
        "cohort_dir": args.cohort_dir, "out_dir": args.out_dir, "seed": args.seed,
        "n_normal": args.n_normal, "n_abnormal": args.n_abnormal,
        "style": args.style, "scorer": args.scorer, "preds_file": args.preds_file,
        "cutoff": args.cutoff, "resample_mm": args.resample, "folds": args.folds,
    }
    for key, value in overrides.items():
        if value is not None:
            cfg_dict[key] = value
    if args.rule_n is not None or args.rule_a is not None:
        rule = cfg_dict.get("rule", {})
        if args.rule_n is not None:
            rule["n"] = args.rule_n
        if args.rule_a is not None:
            rule["a"] = args.rule_a
        cfg_dict["rule"] = rule
    if args.no_displays:
        cfg_dict["write_displays"] = False
    if args.no_volumes:
        cfg_dict["write_volumes"] = False
    cfg = PipelineConfig.from_dict(cfg_dict)
    report = run_pipeline(cfg)
    for rule_name, vals in report["metrics"].items():
        cells = "  ".join(f"{k}={fmt_metric(v)}" for k, v in vals.items())
        print(f"{rule_name}: {cells}")
    print(f"report: {Path(cfg.out_dir) / 'run_report.json'}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="dtsforge",
        description="Multi-view tomosynthesis-style CAD pipeline on CT volumes.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="voxelize one phantom spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--id", default="p000")
    p.set_defaults(fn=_cmd_phantom)

    p = sub.add_parser("phantom-cohort", help="generate a jittered phantom cohort")
    p.add_argument("--normal", type=int, required=True)
    p.add_argument("--abnormal", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--style", choices=("ellipsoid", "occluded"), default="ellipsoid")
    p.set_defaults(fn=_cmd_phantom_cohort)

    p = sub.add_parser("strip-bed", help="remove the patient bed from a CT volume")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mask-out")
    p.add_argument("--threshold", type=float, default=-500.0)
    p.add_argument("--median", type=int, default=5)
    p.add_argument("--erode", type=int, default=2)
    p.add_argument("--dilate", type=int, default=2)
    p.set_defaults(fn=_cmd_strip_bed)

    p = sub.add_parser("resample", help="resample a volume to an isotropic grid")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pitch", type=float, default=1.0)
    p.set_defaults(fn=_cmd_resample)

    p = sub.add_parser("project", help="cone-beam projections of a volume")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--views", help="comma-separated angles overriding the geometry")
    p.add_argument("--geometry", help="geometry file (default: built-in)")
    p.add_argument("--mask-in", help="binary volume to project alongside")
    p.add_argument("--mask-out-dir")
    p.add_argument("--min-path", type=float, default=1.0)
    p.set_defaults(fn=_cmd_project)

    p = sub.add_parser("project-mask", help="project a binary volume to 2D masks")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--views")
    p.add_argument("--geometry")
    p.add_argument("--min-path", type=float, default=1.0)
    p.set_defaults(fn=_cmd_project_mask)

    p = sub.add_parser("score", help="threshold-score one projection image")
    p.add_argument("--proj", required=True, help="16-bit projection PGM")
    p.add_argument("--patient", required=True)
    p.add_argument("--angle", type=float, required=True)
    p.add_argument("--cutoff", type=float, required=True)
    p.add_argument("--mask", help="scoring-band mask PGM")
    p.add_argument("--geometry")
    p.add_argument("--out", required=True, help="prediction CSV to write")
    p.add_argument("--append", action="store_true")
    p.set_defaults(fn=_cmd_score)

    p = sub.add_parser("ensemble", help="apply an N/A vote rule to predictions")
    p.add_argument("--preds", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--a", type=int, required=True)
    p.add_argument("--out", help="write per-patient decisions CSV")
    p.set_defaults(fn=_cmd_ensemble)

    p = sub.add_parser("sweep-a", help="metrics for every A in 1..N")
    p.add_argument("--preds", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--n", type=int, required=True)
    p.set_defaults(fn=_cmd_sweep_a)

    p = sub.add_parser("metrics", help="confusion metrics for decided labels")
    p.add_argument("--preds", required=True, help="patient_id,label CSV")
    p.add_argument("--truth", required=True)
    p.set_defaults(fn=_cmd_metrics)

    p = sub.add_parser("seg-eval", help="Jaccard/Dice between two mask images")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.set_defaults(fn=_cmd_seg_eval)

    p = sub.add_parser("folds", help="stratified cross-validation assignment")
    p.add_argument("--patients", required=True, help="patient_id,label CSV")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_folds)

    p = sub.add_parser("refine-cam", help="mask-refine an activation map and render")
    p.add_argument("--act", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--base", required=True, help="8-bit display PGM")
    p.add_argument("--out", required=True, help="overlay PPM")
    p.add_argument("--act-out", help="write the refined activation file")
    p.add_argument("--reduce", choices=("mean", "max"), default="mean")
    p.set_defaults(fn=_cmd_refine_cam)

    p = sub.add_parser("pipeline", help="run every stage end to end")
    p.add_argument("--config", help="JSON config; flags below override it")
    p.add_argument("--cohort-dir")
    p.add_argument("--out-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-normal", type=int)
    p.add_argument("--n-abnormal", type=int)
    p.add_argument("--style", choices=("ellipsoid", "occluded"))
    p.add_argument("--scorer", choices=("threshold", "external-preds"))
    p.add_argument("--preds-file")
    p.add_argument("--cutoff", type=float)
    p.add_argument("--resample", type=float, help="isotropic pitch in mm")
    p.add_argument("--folds", type=int)
    p.add_argument("--rule-n", type=int)
    p.add_argument("--rule-a", type=int)
    p.add_argument("--no-displays", action="store_true")
    p.add_argument("--no-volumes", action="store_true")
    p.set_defaults(fn=_cmd_pipeline)

    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except PipelineError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
