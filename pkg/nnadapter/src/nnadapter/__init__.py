"""Per-view network training on projection pipeline artifacts.

Consumes a pipeline run directory (display images, lung silhouettes,
truth CSV) purely through the files and exports predictions, masks, and
gradient-weighted activation maps in the same interchange formats the
pipeline reads and writes.
"""

from .classifier import infer_views, train_classifier
from .data import (ViewSample, angle_tag, discover_views, prepare_image,
                   prepare_mask, read_truth, write_activation, write_mask,
                   write_predictions)
from .gradcam import activation_stack, export_activations
from .models import (AttentionUNet, ResidualClassifier, build_model,
                     find_artifacts, load_model, save_model)
from .recipes import TrainRecipe, classify_recipe, segment_recipe
from .segmenter import predict_masks, train_segmenter

__all__ = [
    "AttentionUNet",
    "ResidualClassifier",
    "TrainRecipe",
    "ViewSample",
    "activation_stack",
    "angle_tag",
    "build_model",
    "classify_recipe",
    "discover_views",
    "export_activations",
    "find_artifacts",
    "infer_views",
    "load_model",
    "predict_masks",
    "prepare_image",
    "prepare_mask",
    "read_truth",
    "save_model",
    "segment_recipe",
    "train_classifier",
    "train_segmenter",
    "write_activation",
    "write_mask",
    "write_predictions",
]
