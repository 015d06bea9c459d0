"""Command-line front end: train-classify, train-segment, infer, export-cam."""

from __future__ import annotations

import argparse
import sys

from .classifier import infer_views, train_classifier
from .data import discover_views, read_truth
from .gradcam import export_activations
from .recipes import classify_recipe, segment_recipe
from .segmenter import predict_masks, train_segmenter


def _angles(arg):
    return None if arg is None else [float(a) for a in arg.split(",")]


def _recipe_overrides(args):
    kw = {}
    for name in ("epochs", "batch_size", "lr"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    return kw


def _cmd_train_classify(args):
    views = discover_views(args.run_dir, _angles(args.angles))
    labels = read_truth(args.truth)
    recipe = classify_recipe(**_recipe_overrides(args))
    arts = train_classifier(views, labels, recipe, out_dir=args.out,
                            seed=args.seed, pretrained=args.pretrained)
    for ang in sorted(arts):
        print(f"wrote {arts[ang]}")
    return 0


def _cmd_train_segment(args):
    views = discover_views(args.run_dir, _angles(args.angles))
    recipe = segment_recipe(**_recipe_overrides(args))
    arts = train_segmenter(views, recipe, out_dir=args.out, seed=args.seed)
    for ang in sorted(arts):
        print(f"wrote {arts[ang]}")
    return 0


def _cmd_infer(args):
    views = discover_views(args.run_dir, _angles(args.angles))
    path = infer_views(args.models, views, args.out, cutoff=args.cutoff)
    print(f"wrote {path}")
    return 0


def _cmd_predict_masks(args):
    views = discover_views(args.run_dir, _angles(args.angles))
    for path in predict_masks(args.models, views, args.out):
        print(f"wrote {path}")
    return 0


def _cmd_export_cam(args):
    path = export_activations(args.model, args.image, args.target_class,
                              args.out, patient_id=args.patient_id,
                              view_angle_deg=args.angle)
    print(f"wrote {path}")
    return 0


def _add_run_args(sp):
    sp.add_argument("--run-dir", required=True,
                    help="projection run directory with per-patient images")
    sp.add_argument("--angles", default=None,
                    help="comma-separated view angles (default: all found)")


def _add_train_args(sp):
    sp.add_argument("--out", required=True, help="artifact output directory")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--batch-size", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)


def _build_parser():
    ap = argparse.ArgumentParser(
        prog="nnadapter",
        description="train/run per-view networks on projection run artifacts")
    sub = ap.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("train-classify",
                        help="one classifier per view angle")
    _add_run_args(sp)
    sp.add_argument("--truth", required=True, help="truth.csv with labels")
    _add_train_args(sp)
    sp.add_argument("--pretrained", action="store_true",
                    help="request pretrained initialization (recorded; "
                    "unavailable for the reduced-width backbone)")
    sp.set_defaults(fn=_cmd_train_classify)

    sp = sub.add_parser("train-segment",
                        help="one lung segmenter per view angle")
    _add_run_args(sp)
    _add_train_args(sp)
    sp.set_defaults(fn=_cmd_train_segment)

    sp = sub.add_parser("infer", help="write the per-view prediction CSV")
    _add_run_args(sp)
    sp.add_argument("--models", required=True,
                    help="directory of classifier_<tag>.pt artifacts")
    sp.add_argument("--out", required=True, help="prediction CSV path")
    sp.add_argument("--cutoff", type=float, default=0.5)
    sp.set_defaults(fn=_cmd_infer)

    sp = sub.add_parser("predict-masks",
                        help="write binary lung masks for every view")
    _add_run_args(sp)
    sp.add_argument("--models", required=True,
                    help="directory of segmenter_<tag>.pt artifacts")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(fn=_cmd_predict_masks)

    sp = sub.add_parser("export-cam",
                        help="gradient-weighted activation map for one image")
    sp.add_argument("--model", required=True, help="classifier artifact")
    sp.add_argument("--image", required=True, help="display PGM")
    sp.add_argument("--out", required=True, help="activation output path")
    sp.add_argument("--target-class", type=int, default=1)
    sp.add_argument("--patient-id", default=None)
    sp.add_argument("--angle", type=float, default=None)
    sp.set_defaults(fn=_cmd_export_cam)
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
