"""Per-view classifier training and prediction export.

One independent model per projection angle; the cohort-level decision
stays downstream (the vote rule reads the prediction CSV, not the models).
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import torch

from .data import angle_tag, prepare_image, write_predictions
from .fit import fit, seed_all
from .models import (CLASSIFIER_WIDTHS, build_model, find_artifacts,
                     load_model, save_model)
from .recipes import TrainRecipe, classify_recipe


def _stack_images(samples, size: int) -> torch.Tensor:
    return torch.stack([prepare_image(s.image, size) for s in samples])


def train_classifier(views, labels, recipe: TrainRecipe | None = None,
                     out_dir=".", seed: int = 0,
                     pretrained: bool = False) -> dict:
    """views: angle -> [ViewSample], labels: patient_id -> 0/1.

    Writes ``classifier_<tag>.pt`` per angle plus ``classifier_log.json``
    and returns angle -> artifact path.
    """
    recipe = recipe or classify_recipe()
    if recipe.task != "classify":
        raise ValueError(f"classifier training got a {recipe.task!r} recipe")
    if pretrained:
        # flag accepted for the record, but the reduced-width backbone has
        # no published weights to start from
        raise ValueError("no pretrained weights exist for the reduced-width "
                         "backbone; train from scratch")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log = {"task": "classify", "seed": int(seed), "pretrained": False,
           "backbone": {"family": "residual", "widths": list(CLASSIFIER_WIDTHS)},
           "recipe": dataclasses.asdict(recipe), "models": {}}
    artifacts = {}
    for k, ang in enumerate(sorted(views)):
        samples = views[ang]
        y = []
        for s in samples:
            if s.patient_id not in labels:
                raise ValueError(f"no label for patient {s.patient_id!r}")
            y.append(int(labels[s.patient_id]))
        if len(set(y)) < 2:
            raise ValueError(f"view {ang:g}: single-class training set; "
                             "need normal and abnormal examples")
        seed_all(seed * 7919 + 2 * k)
        model = build_model("classifier")
        x = _stack_images(samples, recipe.input_size)
        final_loss = fit(model, x, torch.tensor(y), recipe,
                         seed * 7919 + 2 * k + 1)
        path = out_dir / f"classifier_{angle_tag(ang)}.pt"
        save_model(path, "classifier", model, CLASSIFIER_WIDTHS,
                   recipe.input_size, ang)
        artifacts[ang] = path
        log["models"][angle_tag(ang)] = {"file": path.name,
                                         "images": len(samples),
                                         "final_loss": round(final_loss, 6)}
    (out_dir / "classifier_log.json").write_text(
        json.dumps(log, indent=2, sort_keys=True) + "\n")
    return artifacts


def infer_views(models, views, out_path, cutoff: float = 0.5) -> Path:
    """Run every view through its angle's model; write the prediction CSV.

    ``models`` is a directory of artifacts or an angle -> path mapping.
    prob_abnormal is the softmax mass on class 1; label = prob >= cutoff.
    """
    angles = sorted(views)
    paths = find_artifacts(models, angles, "classifier")
    rows = []
    with torch.no_grad():
        for ang in angles:
            model, meta = load_model(paths[ang])
            if meta["kind"] != "classifier":
                raise ValueError(f"{paths[ang]}: not a classifier artifact")
            x = _stack_images(views[ang], meta["input_size"])
            prob = torch.softmax(model(x), dim=1)[:, 1]
            for s, p in zip(views[ang], prob.tolist()):
                rows.append((s.patient_id, ang, p, int(p >= cutoff)))
    rows.sort(key=lambda r: (r[0], r[1]))
    out_path = Path(out_path)
    write_predictions(rows, out_path, cutoff)
    return out_path
