"""Shared deterministic training loop."""

from __future__ import annotations

import random

import numpy as np
import torch
import torch.nn.functional as F
from torch.nn.modules.batchnorm import _BatchNorm

from .recipes import TrainRecipe


def seed_all(seed: int):
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def _recalibrate_bn(model, x: torch.Tensor, batch_size: int):
    """Recompute BatchNorm running stats under the final weights.

    The exponential running estimates trail the weights; on narrow layers
    the train/eval normalization gap cascades and shifts eval outputs.
    One cumulative-average pass over the data pins eval mode to the same
    statistics training last saw.
    """
    bns = [m for m in model.modules() if isinstance(m, _BatchNorm)]
    if not bns:
        return
    for m in bns:
        m.reset_running_stats()
        m.momentum = None
    model.train()
    with torch.no_grad():
        for i in range(0, x.shape[0], batch_size):
            model(x[i:i + batch_size])


def fit(model, x: torch.Tensor, y: torch.Tensor, recipe: TrainRecipe,
        seed: int) -> float:
    """Full-recipe optimization of one model on in-memory tensors.

    Cross-entropy covers both heads: class targets (n,) and pixel targets
    (n, h, w) go through the same call.  Returns the last epoch's mean loss.
    """
    if recipe.optimizer == "sgd":
        opt = torch.optim.SGD(model.parameters(), lr=recipe.lr,
                              momentum=recipe.momentum)
    else:
        opt = torch.optim.Adam(model.parameters(), lr=recipe.lr)
    sched = torch.optim.lr_scheduler.MultiStepLR(
        opt, milestones=sorted(recipe.lr_steps), gamma=0.1)
    g = torch.Generator().manual_seed(seed)
    n = x.shape[0]
    model.train()
    last = 0.0
    for _ in range(recipe.epochs):
        perm = torch.randperm(n, generator=g)
        total = 0.0
        for i in range(0, n, recipe.batch_size):
            idx = perm[i:i + recipe.batch_size]
            opt.zero_grad()
            loss = F.cross_entropy(model(x[idx]), y[idx])
            loss.backward()
            opt.step()
            total += float(loss.detach()) * idx.numel()
        sched.step()
        last = total / n
    _recalibrate_bn(model, x, recipe.batch_size)
    model.eval()
    return last
