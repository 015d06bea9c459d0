"""Classifier training/inference mechanics on the small run.

Full-recipe quality lives in the acceptance module; here the trainings use
two-epoch recipes, which exercise the same code path in under a second.
"""
import csv
import json
import warnings

import pytest

from dtsforge.ensemble import ingest_predictions

import nnadapter as na


def _tiny(views):
    # patients sort normals first, so take both ends for a two-class subset
    return {a: v[:2] + v[-2:] for a, v in views.items()}


def test_two_angles_give_two_artifacts_and_a_log(clf_dir):
    files = sorted(p.name for p in clf_dir.glob("classifier_*.pt"))
    assert files == ["classifier_+0.pt", "classifier_+30.pt"]
    log = json.loads((clf_dir / "classifier_log.json").read_text())
    assert log["pretrained"] is False
    assert log["recipe"]["epochs"] == 50 and log["recipe"]["batch_size"] == 64
    assert sorted(log["models"]) == ["+0", "+30"]


def test_single_class_training_set_is_rejected(train_views, train_labels,
                                               tmp_path):
    normals = {a: [s for s in v if train_labels[s.patient_id] == 0]
               for a, v in train_views.items()}
    with pytest.raises(ValueError, match="single-class"):
        na.train_classifier(normals, train_labels,
                            na.classify_recipe(epochs=1), out_dir=tmp_path)


def test_pretrained_initialization_is_refused_with_an_explanation(
        train_views, train_labels, tmp_path):
    with pytest.raises(ValueError, match="pretrained"):
        na.train_classifier(_tiny(train_views), train_labels,
                            na.classify_recipe(epochs=1), out_dir=tmp_path,
                            pretrained=True)


def test_segment_recipe_is_rejected_for_classification(train_views,
                                                       train_labels,
                                                       tmp_path):
    with pytest.raises(ValueError, match="recipe"):
        na.train_classifier(train_views, train_labels, na.segment_recipe(),
                            out_dir=tmp_path)


def test_missing_model_for_an_angle_is_an_error(clf_dir, train_views,
                                                tmp_path):
    only_frontal = tmp_path / "partial"
    only_frontal.mkdir()
    (only_frontal / "classifier_+0.pt").write_bytes(
        (clf_dir / "classifier_+0.pt").read_bytes())
    with pytest.raises(ValueError, match="30"):
        na.infer_views(only_frontal, train_views, tmp_path / "p.csv")


def test_predictions_ingest_cleanly_with_probabilities_in_range(preds_path,
                                                                train_views):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        votes = ingest_predictions(preds_path)
    assert caught == []
    assert len(votes) == 20
    assert all(len(v.votes) == 2 for v in votes.values())
    for rec in csv.DictReader(open(preds_path)):
        assert 0.0 <= float(rec["prob_abnormal"]) <= 1.0


def test_labels_match_the_recorded_cutoff(preds_path):
    for rec in csv.DictReader(open(preds_path)):
        want = int(float(rec["prob_abnormal"]) >= float(rec["cutoff"]))
        assert int(rec["label"]) == want


def test_same_seed_reproduces_the_prediction_file_byte_for_byte(
        train_views, train_labels, tmp_path):
    tiny = _tiny(train_views)
    out = []
    for tag in ("a", "b"):
        d = tmp_path / tag
        na.train_classifier(tiny, train_labels, na.classify_recipe(epochs=2),
                            out_dir=d, seed=9)
        p = na.infer_views(d, tiny, d / "preds.csv")
        out.append(p.read_bytes())
    assert out[0] == out[1]
