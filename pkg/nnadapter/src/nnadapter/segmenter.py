"""Per-view lung segmentation: training on image/silhouette pairs and
binary mask prediction back onto the source pixel grid."""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import torch

from .data import (angle_tag, prepare_image, prepare_mask, read_gray,
                   resize_mask_to, write_mask)
from .fit import fit, seed_all
from .models import (SEGMENTER_WIDTHS, build_model, find_artifacts,
                     load_model, save_model)
from .recipes import TrainRecipe, segment_recipe


def _check_paired(views):
    for ang in sorted(views):
        for s in views[ang]:
            if s.mask is None or not Path(s.mask).exists():
                raise ValueError(
                    f"patient {s.patient_id!r} view {ang:g}: no paired mask; "
                    "segmentation trains on image/mask pairs")


def train_segmenter(views, recipe: TrainRecipe | None = None, out_dir=".",
                    seed: int = 0) -> dict:
    """views: angle -> [ViewSample] with masks present on every sample.

    Writes ``segmenter_<tag>.pt`` per angle plus ``segmenter_log.json``.
    """
    recipe = recipe or segment_recipe()
    if recipe.task != "segment":
        raise ValueError(f"segmenter training got a {recipe.task!r} recipe")
    _check_paired(views)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log = {"task": "segment", "seed": int(seed), "pretrained": False,
           "backbone": {"family": "attention-unet",
                        "widths": list(SEGMENTER_WIDTHS)},
           "recipe": dataclasses.asdict(recipe), "models": {}}
    artifacts = {}
    for k, ang in enumerate(sorted(views)):
        samples = views[ang]
        seed_all(seed * 6101 + 2 * k)
        model = build_model("segmenter")
        x = torch.stack([prepare_image(s.image, recipe.input_size)
                         for s in samples])
        y = torch.stack([prepare_mask(s.mask, recipe.input_size)
                         for s in samples])
        final_loss = fit(model, x, y, recipe, seed * 6101 + 2 * k + 1)
        path = out_dir / f"segmenter_{angle_tag(ang)}.pt"
        save_model(path, "segmenter", model, SEGMENTER_WIDTHS,
                   recipe.input_size, ang)
        artifacts[ang] = path
        log["models"][angle_tag(ang)] = {"file": path.name,
                                         "pairs": len(samples),
                                         "final_loss": round(final_loss, 6)}
    (out_dir / "segmenter_log.json").write_text(
        json.dumps(log, indent=2, sort_keys=True) + "\n")
    return artifacts


def predict_masks(models, views, out_dir) -> list:
    """Binary masks for every sample, written as ``pred_mask_<tag>.pgm``
    under ``out_dir/<patient_id>/`` at the source image's pixel size."""
    angles = sorted(views)
    paths = find_artifacts(models, angles, "segmenter")
    out_dir = Path(out_dir)
    written = []
    with torch.no_grad():
        for ang in angles:
            model, meta = load_model(paths[ang])
            if meta["kind"] != "segmenter":
                raise ValueError(f"{paths[ang]}: not a segmenter artifact")
            for s in views[ang]:
                x = prepare_image(s.image, meta["input_size"])[None]
                pred = model(x).argmax(dim=1)[0].numpy().astype("uint8")
                full = resize_mask_to(pred, read_gray(s.image).shape)
                pdir = out_dir / s.patient_id
                pdir.mkdir(parents=True, exist_ok=True)
                path = pdir / f"pred_mask_{angle_tag(ang)}.pgm"
                write_mask(path, full)
                written.append(path)
    return written
