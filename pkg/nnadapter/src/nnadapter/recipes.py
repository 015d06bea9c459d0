"""Training recipes for the per-view networks.

Two fixed starting points: image classification at 512 px (SGD, lr 0.1
divided by 10 every ten epochs, 50 epochs, batch 64, cross-entropy) and
lung segmentation at 256 px (Adam, lr 1e-4 dropped at epochs 70/80/90,
100 epochs, batch 2, pixel-wise cross-entropy).  Any field can be
overridden through the factory keywords; the schedule for the classifier
keeps its every-ten-epochs shape when the epoch count changes.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass


@dataclass(frozen=True)
class TrainRecipe:
    task: str                    # "classify" | "segment"
    input_size: int              # square model input, pixels
    optimizer: str               # "sgd" | "adam"
    lr: float
    lr_steps: tuple              # epochs at which lr is divided by 10
    epochs: int
    batch_size: int
    loss: str
    momentum: float = 0.0        # sgd only

    def __post_init__(self):
        if self.task not in ("classify", "segment"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 1:
            raise ValueError("recipe needs at least one epoch")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.input_size < 8:
            raise ValueError("input size too small")
        if any(s < 1 for s in self.lr_steps):
            raise ValueError("lr steps are epoch numbers >= 1")

    def replace(self, **kw) -> "TrainRecipe":
        return dataclasses.replace(self, **kw)


def classify_recipe(**kw) -> TrainRecipe:
    epochs = int(kw.pop("epochs", 50))
    steps = kw.pop("lr_steps", tuple(range(10, epochs, 10)))
    base = TrainRecipe(task="classify", input_size=512, optimizer="sgd",
                       lr=0.1, lr_steps=tuple(steps), epochs=epochs,
                       batch_size=64, loss="cross-entropy", momentum=0.9)
    return base.replace(**kw) if kw else base


def segment_recipe(**kw) -> TrainRecipe:
    epochs = int(kw.pop("epochs", 100))
    # batch size 2; the drop epochs past the end are simply never reached
    steps = kw.pop("lr_steps", tuple(s for s in (70, 80, 90) if s < epochs))
    base = TrainRecipe(task="segment", input_size=256, optimizer="adam",
                       lr=1e-4, lr_steps=tuple(steps), epochs=epochs,
                       batch_size=2, loss="pixel-cross-entropy")
    return base.replace(**kw) if kw else base
