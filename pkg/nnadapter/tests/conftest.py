"""Session fixtures: two small projection runs (train + held-out) built with
the pipeline package, and fully trained per-view models on the first.

The adapter package itself never touches the pipeline API; these fixtures
and the assertions do, because the whole point of the suite is that the
exchanged files satisfy both sides.
"""
import pytest

from dtsforge.pipeline import PipelineConfig, run_pipeline

import nnadapter as na

ANGLES = [0.0, 30.0]
DETECTOR = [128, 128]


def _build_run(root, name, n_normal, n_abnormal, seed):
    cfg = PipelineConfig.from_dict({
        "cohort_dir": str(root / f"cohort_{name}"),
        "out_dir": str(root / f"run_{name}"),
        "n_normal": n_normal, "n_abnormal": n_abnormal,
        "style": "ellipsoid", "seed": seed,
        "geometry": {"detector_px": DETECTOR, "view_angles_deg": ANGLES},
        "rule": {"n": len(ANGLES), "a": 1}, "folds": 2,
        "write_volumes": False,
    })
    run_pipeline(cfg)
    return {"run": root / f"run_{name}",
            "truth": root / f"cohort_{name}" / "truth.csv"}


@pytest.fixture(scope="session")
def train_run(tmp_path_factory):
    return _build_run(tmp_path_factory.mktemp("adapter"), "train", 10, 10, 11)


@pytest.fixture(scope="session")
def heldout_run(tmp_path_factory):
    return _build_run(tmp_path_factory.mktemp("adapter_ho"), "heldout", 3, 3, 77)


@pytest.fixture(scope="session")
def train_views(train_run):
    return na.discover_views(train_run["run"])


@pytest.fixture(scope="session")
def train_labels(train_run):
    return na.read_truth(train_run["truth"])


@pytest.fixture(scope="session")
def clf_dir(tmp_path_factory, train_views, train_labels):
    """Full-recipe classifiers, one per angle."""
    out = tmp_path_factory.mktemp("clf")
    na.train_classifier(train_views, train_labels, na.classify_recipe(),
                        out_dir=out, seed=3)
    return out


@pytest.fixture(scope="session")
def preds_path(tmp_path_factory, clf_dir, train_views):
    out = tmp_path_factory.mktemp("preds") / "predictions.csv"
    return na.infer_views(clf_dir, train_views, out, cutoff=0.5)


@pytest.fixture(scope="session")
def seg_dir(tmp_path_factory, train_views):
    """Full-recipe segmenters on every training pair."""
    out = tmp_path_factory.mktemp("seg")
    na.train_segmenter(train_views, na.segment_recipe(), out_dir=out, seed=5)
    return out


@pytest.fixture(scope="session")
def heldout_mask_paths(tmp_path_factory, seg_dir, heldout_run):
    views = na.discover_views(heldout_run["run"])
    out = tmp_path_factory.mktemp("segout")
    return na.predict_masks(seg_dir, views, out)
