"""Gradient-weighted activation export for trained classifiers.

The payload keeps the per-channel structure: channel k of the (h, w, c)
stack is alpha_k * A_k, where A is the final residual feature map and
alpha_k the spatial mean of d(score)/dA_k.  Channel reduction (and lung
masking) happen downstream in the consumer.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .data import prepare_image, write_activation
from .models import load_model


def activation_stack(model, x: torch.Tensor, target_class: int) -> np.ndarray:
    """(h, w, c) gradient-weighted feature stack for one prepared image."""
    if x.dim() == 3:
        x = x[None]
    feats = {}

    def _keep(_module, _inp, out):
        feats["a"] = out

    hook = model.layer3.register_forward_hook(_keep)
    try:
        logits = model(x)
    finally:
        hook.remove()
    n_classes = logits.shape[1]
    if not 0 <= int(target_class) < n_classes:
        raise ValueError(f"target class {target_class} out of range "
                         f"[0, {n_classes})")
    a = feats["a"]
    grad, = torch.autograd.grad(logits[0, int(target_class)], a)
    alpha = grad.mean(dim=(2, 3))
    stack = (alpha[:, :, None, None] * a).detach()[0]
    return stack.permute(1, 2, 0).numpy().astype(np.float32)


def export_activations(model_path, image_path, target_class: int, out_path,
                       patient_id: str | None = None,
                       view_angle_deg: float | None = None) -> Path:
    """Write one image's activation stack in the interchange format.

    Header identity defaults to the image's parent directory name and the
    angle recorded in the model artifact; explicit arguments win.
    """
    model, meta = load_model(model_path)
    if meta["kind"] != "classifier":
        raise ValueError(f"{model_path}: activation export needs a "
                         "classifier artifact")
    x = prepare_image(image_path, meta["input_size"])
    stack = activation_stack(model, x, target_class)
    pid = Path(image_path).parent.name if patient_id is None else patient_id
    ang = (meta["view_angle_deg"] if view_angle_deg is None
           else float(view_angle_deg))
    out_path = Path(out_path)
    write_activation(out_path, stack, pid, ang)
    return out_path
