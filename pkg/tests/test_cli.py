"""End-to-end exercises of the console entry point on tiny inputs."""
import json

import numpy as np
import pytest

from dtsforge.cam import ActivationMap, load_activation, save_activation
from dtsforge.cli import main
from dtsforge.ensemble import ingest_predictions
from dtsforge.imgio import write_mask_pgm, write_pgm8, write_pgm16_scaled
from dtsforge.projection import ProjectionGeometry, save_geometry

COARSE_SPEC = {
    "seed": 3,
    "dims": [40, 36, 30],
    "spacing": [8.0, 8.0, 8.0],
    "lesions": [{"center": [-52.0, 8.0, 4.0], "radius": 16.0, "hu": 900.0}],
}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """One coarse phantom plus projections, produced through the CLI itself."""
    d = tmp_path_factory.mktemp("cli")
    save_geometry(ProjectionGeometry(detector_px=(96, 96),
                                     view_angles_deg=(-30.0, 0.0, 30.0)),
                  d / "geo.json")
    (d / "spec.json").write_text(json.dumps(COARSE_SPEC))
    assert main(["phantom", "--spec", str(d / "spec.json"),
                 "--out-dir", str(d / "ph"), "--id", "pt"]) == 0
    assert main(["project", "--in", str(d / "ph" / "pt.json"),
                 "--out-dir", str(d / "proj"), "--geometry", str(d / "geo.json"),
                 "--mask-in", str(d / "ph" / "pt_lung.json")]) == 0
    return d


@pytest.fixture(scope="module")
def cohort(tmp_path_factory):
    d = tmp_path_factory.mktemp("clicoh") / "cohort"
    assert main(["phantom-cohort", "--normal", "1", "--abnormal", "1",
                 "--seed", "9", "--out-dir", str(d), "--style", "occluded"]) == 0
    return d


def test_phantom_writes_volume_and_masks(work):
    for name in ("pt.json", "pt.raw", "pt_subject.json", "pt_lung.json"):
        assert (work / "ph" / name).exists(), name


def test_project_writes_all_views_and_geometry(work):
    proj = work / "proj"
    assert (proj / "geometry.json").exists()
    for tag in ("-30", "+0", "+30"):
        assert (proj / f"proj_{tag}.pgm").exists()
        assert (proj / f"proj_{tag}.pgm.json").exists()
        assert (proj / f"display_{tag}.pgm").exists()
        assert (proj / f"mask_{tag}.pgm").exists()


def test_views_override_in_equals_form(work, tmp_path):
    # a leading minus in the list only parses as --views=...
    assert main(["project", "--in", str(work / "ph" / "pt.json"),
                 "--out-dir", str(tmp_path), "--geometry", str(work / "geo.json"),
                 "--views=-30,30"]) == 0
    assert (tmp_path / "proj_-30.pgm").exists()
    assert (tmp_path / "proj_+30.pgm").exists()
    assert not (tmp_path / "proj_+0.pgm").exists()


def test_project_mask_command(work, tmp_path, capsys):
    assert main(["project-mask", "--in", str(work / "ph" / "pt_lung.json"),
                 "--out-dir", str(tmp_path), "--geometry", str(work / "geo.json"),
                 "--min-path", "30"]) == 0
    assert "projected 3 masks" in capsys.readouterr().out
    for tag in ("-30", "+0", "+30"):
        assert (tmp_path / f"mask_{tag}.pgm").exists()


def test_strip_bed_and_resample_commands(work, tmp_path, capsys):
    assert main(["strip-bed", "--in", str(work / "ph" / "pt.json"),
                 "--out", str(tmp_path / "sub.json"),
                 "--mask-out", str(tmp_path / "m.json")]) == 0
    assert "subject voxels:" in capsys.readouterr().out
    assert (tmp_path / "sub.raw").exists() and (tmp_path / "m.raw").exists()
    assert main(["resample", "--in", str(tmp_path / "sub.json"),
                 "--out", str(tmp_path / "iso.json"), "--pitch", "8"]) == 0
    assert (tmp_path / "iso.raw").exists()


def test_score_append_and_ensemble_flow(work, tmp_path, capsys):
    csv_path = tmp_path / "preds.csv"
    common = ["score", "--proj", str(work / "proj" / "proj_+0.pgm"),
              "--mask", str(work / "proj" / "mask_+0.pgm"),
              "--angle", "0", "--cutoff", "0.3", "--out", str(csv_path)]
    assert main(common + ["--patient", "pa"]) == 0
    assert main(common + ["--patient", "pb", "--append"]) == 0
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "patient_id,view_angle_deg,prob_abnormal,label,cutoff"
    assert len(lines) == 3 and lines[1].startswith("pa,") and lines[2].startswith("pb,")
    votes = ingest_predictions(csv_path)
    assert set(votes) == {"pa", "pb"}

    truth = tmp_path / "truth.csv"
    truth.write_text("patient_id,label\npa,1\npb,0\n")
    capsys.readouterr()
    assert main(["ensemble", "--preds", str(csv_path), "--truth", str(truth),
                 "--n", "1", "--a", "1", "--out", str(tmp_path / "dec.csv")]) == 0
    assert "N/A=1/1:" in capsys.readouterr().out
    dec = (tmp_path / "dec.csv").read_text().splitlines()
    assert dec[0] == "patient_id,label" and len(dec) == 3

    assert main(["metrics", "--preds", str(tmp_path / "dec.csv"),
                 "--truth", str(truth)]) == 0
    out = capsys.readouterr().out
    assert "tp=" in out and "accuracy=" in out


def test_sweep_a_command(tmp_path, capsys):
    preds = tmp_path / "p.csv"
    rows = ["patient_id,view_angle_deg,prob_abnormal,label,cutoff"]
    for pid, labs in (("a", (1, 1, 0)), ("b", (0, 0, 0))):
        for ang, lab in zip((-30, 0, 30), labs):
            rows.append(f"{pid},{ang},{float(lab)},{lab},0.3")
    preds.write_text("\n".join(rows) + "\n")
    (tmp_path / "t.csv").write_text("patient_id,label\na,1\nb,0\n")
    assert main(["sweep-a", "--preds", str(preds),
                 "--truth", str(tmp_path / "t.csv"), "--n", "3"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("a  accuracy")
    assert len(out) == 4  # header + a=1..3


def test_folds_command_stdout_and_file(tmp_path, capsys):
    t = tmp_path / "t.csv"
    t.write_text("patient_id,label\np0,0\np1,0\np2,1\np3,1\n")
    assert main(["folds", "--patients", str(t), "--k", "2", "--seed", "4"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "patient_id,label,fold"
    assert len(out) == 5
    assert main(["folds", "--patients", str(t), "--k", "2", "--seed", "4",
                 "--out", str(tmp_path / "f.csv")]) == 0
    assert (tmp_path / "f.csv").read_text().splitlines() == out


def test_seg_eval_command(tmp_path, capsys):
    m = np.zeros((8, 8), dtype=np.uint8)
    m[2:6, 2:6] = 1
    write_mask_pgm(tmp_path / "a.pgm", m)
    write_mask_pgm(tmp_path / "b.pgm", m)
    assert main(["seg-eval", "--pred", str(tmp_path / "a.pgm"),
                 "--ref", str(tmp_path / "b.pgm")]) == 0
    assert "jaccard=1.0000 dice=1.0000" in capsys.readouterr().out


def test_refine_cam_command(tmp_path):
    vals = np.linspace(0.1, 1.0, 8 * 8 * 2, dtype=np.float32).reshape(8, 8, 2)
    save_activation(tmp_path / "act.bin", ActivationMap(vals, "pt", 0.0))
    mask = np.zeros((8, 8), dtype=np.uint8)
    mask[:, :4] = 1
    write_mask_pgm(tmp_path / "mask.pgm", mask)
    write_pgm8(tmp_path / "base.pgm",
               np.tile(np.arange(16, dtype=np.uint8) * 16, (16, 1)))
    assert main(["refine-cam", "--act", str(tmp_path / "act.bin"),
                 "--mask", str(tmp_path / "mask.pgm"),
                 "--base", str(tmp_path / "base.pgm"),
                 "--out", str(tmp_path / "ov.ppm"),
                 "--act-out", str(tmp_path / "ref.bin"), "--reduce", "max"]) == 0
    assert (tmp_path / "ov.ppm").exists()
    refined = load_activation(tmp_path / "ref.bin")
    assert np.all(refined.values[:, 4:, :] == 0.0)
    assert np.array_equal(refined.values[:, :4, :], vals[:, :4, :])


def test_refine_cam_rejects_16bit_base(tmp_path, capsys):
    vals = np.ones((4, 4, 1), dtype=np.float32)
    save_activation(tmp_path / "act.bin", ActivationMap(vals, "pt", 0.0))
    write_mask_pgm(tmp_path / "mask.pgm", np.ones((4, 4), dtype=np.uint8))
    write_pgm16_scaled(tmp_path / "base.pgm", np.ones((4, 4)))
    assert main(["refine-cam", "--act", str(tmp_path / "act.bin"),
                 "--mask", str(tmp_path / "mask.pgm"),
                 "--base", str(tmp_path / "base.pgm"),
                 "--out", str(tmp_path / "ov.ppm")]) == 1
    assert "8-bit display" in capsys.readouterr().err


def test_errors_exit_nonzero_with_message(tmp_path, capsys):
    assert main(["strip-bed", "--in", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "o.json")]) == 1
    assert capsys.readouterr().err.startswith("error:")
    bad = tmp_path / "spec.json"
    bad.write_text(json.dumps({"bogus_key": 1}))
    assert main(["phantom", "--spec", str(bad), "--out-dir", str(tmp_path)]) == 1
    assert "unknown phantom spec keys" in capsys.readouterr().err
    preds = tmp_path / "p.csv"
    preds.write_text("patient_id,view_angle_deg,prob_abnormal,label,cutoff\n"
                     "a,0,1.0,1,0.3\n")
    (tmp_path / "t.csv").write_text("patient_id,label\na,1\n")
    assert main(["ensemble", "--preds", str(preds), "--truth", str(tmp_path / "t.csv"),
                 "--n", "1", "--a", "2"]) == 1


def test_unknown_subcommand_is_a_usage_error():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
    with pytest.raises(SystemExit):
        main([])


def test_pipeline_command_with_config_and_overrides(cohort, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"geometry": {"detector_px": [96, 96]}}))
    out = tmp_path / "run"
    assert main(["pipeline", "--config", str(cfg),
                 "--cohort-dir", str(cohort), "--out-dir", str(out),
                 "--seed", "9", "--rule-n", "5", "--rule-a", "2",
                 "--folds", "1", "--resample", "3.0", "--no-volumes"]) == 0
    text = capsys.readouterr().out
    assert "5/2:" in text and "1/1 (frontal):" in text
    assert "run_report.json" in text
    report = json.loads((out / "run_report.json").read_text())
    assert report["patients"] == 2 and report["rule"] == "5/2"
    assert main(["pipeline", "--cohort-dir", str(cohort), "--out-dir", str(out),
                 "--scorer", "external-preds"]) == 1
    assert "preds_file" in capsys.readouterr().err
