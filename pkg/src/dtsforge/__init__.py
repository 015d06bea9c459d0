"""Tomosynthesis-style CAD toolkit: phantoms, projections, and ensemble scoring."""

from .bed import BedRemovalConfig, strip_bed, subject_mask
from .cam import (ActivationMap, FeatureMask, align_mask, load_activation,
                  reduce_channels, refine, render_overlay, save_activation)
from .ensemble import (EnsembleRule, SweepRow, ViewPrediction, VoteVector, decide,
                       ingest_predictions, majority_vote, sweep_a,
                       threshold_scorer, write_predictions)
from .metrics import (ConfusionMatrix, FoldAssignment, MetricReport, aggregate,
                      confusion, f1_score, fmt_metric, metrics, seg_overlap,
                      stratified_folds)
from .phantom import (BedArc, Box, Ellipsoid, PhantomSpec, Sphere, bed_truth_mask,
                      generate, generate_cohort, jittered_occluded_spec,
                      jittered_spec, spec_from_dict)
from .pipeline import PipelineConfig, PipelineError, run_pipeline
from .projection import (DEFAULT_ANGLES_DEG, AttenuationModel, ProjectionGeometry,
                         ProjectionImage, load_geometry, project_all_views,
                         project_binary_mask, project_thickness, project_view,
                         save_geometry, to_display)
from .volume import (BinaryVolume, CtVolume, VolumeFormatError, binarize,
                     load_mask_volume, load_volume, resample_isotropic,
                     save_mask_volume, save_volume)
