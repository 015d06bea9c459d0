import json

import numpy as np
import pytest

from dtsforge.bed import BedRemovalConfig
from dtsforge.ensemble import EnsembleRule, ingest_predictions
from dtsforge.phantom import generate_cohort
from dtsforge.pipeline import PipelineConfig, PipelineError, run_pipeline
from dtsforge.projection import ProjectionGeometry


@pytest.fixture(scope="module")
def cohort_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cohort")
    generate_cohort(2, 2, seed=5, out_dir=d, style="occluded")
    return d


def _cfg(cohort_dir, out_dir, **kw):
    base = dict(cohort_dir=str(cohort_dir), out_dir=str(out_dir), seed=5,
                geometry={"detector_px": [96, 96]}, rule={"n": 5, "a": 2},
                folds=2, write_volumes=False)
    base.update(kw)
    return PipelineConfig.from_dict(base)


def test_config_from_dict_parses_nested_sections():
    cfg = PipelineConfig.from_dict({
        "bed": {"threshold_hu": -400.0},
        "geometry": {"detector_px": [64, 64], "view_angles_deg": [-30, 0, 30]},
        "rule": {"n": 3, "a": 1},
        "resample_mm": 2.0,
    })
    assert isinstance(cfg.bed, BedRemovalConfig)
    assert cfg.bed.threshold_hu == -400.0
    assert isinstance(cfg.geometry, ProjectionGeometry)
    assert cfg.geometry.view_angles_deg == (-30.0, 0.0, 30.0)
    assert cfg.rule == EnsembleRule(3, 1)
    with pytest.raises(ValueError, match="unknown config keys"):
        PipelineConfig.from_dict({"bogus": 1})


def test_run_writes_all_reports_and_artifacts(cohort_dir, tmp_path):
    out = tmp_path / "run"
    report = run_pipeline(_cfg(cohort_dir, out, resample_mm=3.0))
    for name in ("predictions.csv", "decisions.csv", "decisions_baseline.csv",
                 "metrics.csv", "sweep.csv", "folds.csv", "cv.csv",
                 "run_report.json", "geometry.json"):
        assert (out / name).exists(), name
    for pid in ("p000", "p001", "p002", "p003"):
        pdir = out / "patients" / pid
        for tag in ("-60", "-30", "+0", "+30", "+60"):
            assert (pdir / f"proj_{tag}.pgm").exists()
            assert (pdir / f"proj_{tag}.pgm.json").exists()
            assert (pdir / f"mask_{tag}.pgm").exists()
            assert (pdir / f"band_{tag}.pgm").exists()
            assert (pdir / f"display_{tag}.pgm").exists()
            assert (pdir / f"overlay_{tag}.ppm").exists()
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == "rule,accuracy,sensitivity,specificity,precision,f1"
    assert lines[1].startswith("1/1 (frontal),")
    assert lines[2].startswith("5/2,")
    assert report["patients"] == 4
    assert report["rule"] == "5/2"
    assert set(report["metrics"]) == {"1/1 (frontal)", "5/2"}
    # parses back through the interchange reader
    votes = ingest_predictions(out / "predictions.csv")
    assert set(votes) == {"p000", "p001", "p002", "p003"}


def test_rerun_is_byte_identical(cohort_dir, tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    run_pipeline(_cfg(cohort_dir, a))
    run_pipeline(_cfg(cohort_dir, b))
    for name in ("predictions.csv", "decisions.csv", "metrics.csv", "sweep.csv",
                 "folds.csv", "cv.csv", "run_report.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_worker_count_does_not_change_reports(cohort_dir, tmp_path, monkeypatch):
    a = tmp_path / "serial"
    b = tmp_path / "threaded"
    run_pipeline(_cfg(cohort_dir, a))
    monkeypatch.setenv("DTSFORGE_THREADS", "3")
    run_pipeline(_cfg(cohort_dir, b))
    assert (a / "run_report.json").read_bytes() == (b / "run_report.json").read_bytes()
    assert (a / "predictions.csv").read_bytes() == (b / "predictions.csv").read_bytes()


def test_external_preds_resumes_from_prediction_file(cohort_dir, tmp_path):
    first = tmp_path / "first"
    run_pipeline(_cfg(cohort_dir, first))
    resumed = tmp_path / "resumed"
    run_pipeline(_cfg(cohort_dir, resumed, scorer="external-preds",
                      preds_file=str(first / "predictions.csv")))
    for name in ("decisions.csv", "metrics.csv", "sweep.csv", "cv.csv"):
        assert (first / name).read_bytes() == (resumed / name).read_bytes(), name
    # imaging stages were skipped entirely
    assert not (resumed / "patients").exists()


def test_config_validation_errors(cohort_dir, tmp_path):
    with pytest.raises(PipelineError, match="scorer"):
        run_pipeline(_cfg(cohort_dir, tmp_path / "x", scorer="oracle"))
    with pytest.raises(PipelineError, match="rule"):
        run_pipeline(_cfg(cohort_dir, tmp_path / "x", rule={"n": 3, "a": 1}))
    with pytest.raises(PipelineError, match="frontal"):
        run_pipeline(_cfg(cohort_dir, tmp_path / "x",
                          geometry={"detector_px": [96, 96],
                                    "view_angles_deg": [-60, -30, 30, 60, 45]}))
    with pytest.raises(PipelineError, match="preds_file"):
        run_pipeline(_cfg(cohort_dir, tmp_path / "x", scorer="external-preds"))
    with pytest.raises(PipelineError, match="cohort"):
        run_pipeline(_cfg(tmp_path / "nowhere", tmp_path / "x"))


def test_failing_patient_names_stage_and_id(cohort_dir, tmp_path):
    broken = tmp_path / "broken_cohort"
    broken.mkdir()
    for f in cohort_dir.iterdir():
        (broken / f.name).write_bytes(f.read_bytes())
    raw = broken / "p001.raw"
    raw.write_bytes(raw.read_bytes()[:-100])
    with pytest.raises(PipelineError, match=r"load\[p001\]"):
        run_pipeline(_cfg(broken, tmp_path / "x"))


def test_truth_file_validation(cohort_dir, tmp_path):
    bad = tmp_path / "bad_cohort"
    bad.mkdir()
    (bad / "truth.csv").write_text("patient_id,label\np000,1\np000,0\n")
    with pytest.raises(PipelineError, match="duplicate"):
        run_pipeline(_cfg(bad, tmp_path / "x"))
    (bad / "truth.csv").write_text("patient_id,label\np000,2\n")
    with pytest.raises(PipelineError, match="non-binary"):
        run_pipeline(_cfg(bad, tmp_path / "x"))
    (bad / "truth.csv").write_text("who,what\n")
    with pytest.raises(PipelineError, match="header"):
        run_pipeline(_cfg(bad, tmp_path / "x"))


def test_external_preds_patient_set_mismatch(cohort_dir, tmp_path):
    preds = tmp_path / "alien.csv"
    rows = ["patient_id,view_angle_deg,prob_abnormal,label,cutoff"]
    for ang in (-60, -30, 0, 30, 60):
        rows.append(f"ghost,{ang},0.1,0,0.3")
    preds.write_text("\n".join(rows) + "\n")
    with pytest.raises(PipelineError, match="ghost"):
        run_pipeline(_cfg(cohort_dir, tmp_path / "x", scorer="external-preds",
                          preds_file=str(preds)))


def test_report_json_is_sorted_and_complete(cohort_dir, tmp_path):
    out = tmp_path / "rep"
    report = run_pipeline(_cfg(cohort_dir, out))
    on_disk = json.loads((out / "run_report.json").read_text())
    assert on_disk == json.loads(json.dumps(report))
    assert on_disk["abnormal"] == 2 and on_disk["normal"] == 2
    assert on_disk["view_angles_deg"] == [-60.0, -30.0, 0.0, 30.0, 60.0]
    assert on_disk["cv_mean"]["5/2"]["accuracy"] is not None
