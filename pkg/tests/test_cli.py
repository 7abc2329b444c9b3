import json

import numpy as np
import pytest

from vtinspect.cli import main
from vtinspect.defects import DefectClass
from vtinspect.evaluation import EvalReport, confusion_matrix
from vtinspect.heightfield import Heightfield, save_heightfield
from vtinspect.report import emit_report, render_json, render_table
from vtinspect.synth import scratch_specimen, stamp_defect
from vtinspect.vision import BoundingBox, Detection, RgbImage, load_png, save_png, write_detections
from vtinspect.voc import GroundTruth, VocObject, parse_voc, write_voc


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def gt_dir(tmp_path):
    d = tmp_path / "gt"
    d.mkdir()
    objs = [VocObject(DefectClass.SCRATCH, BoundingBox(10, 20, 110, 90)),
            VocObject(DefectClass.GOUGE, BoundingBox(300, 300, 340, 340))]
    write_voc(GroundTruth("img", (640, 480, 3), objs), d / "img.xml")
    return d


# --- tactile ---------------------------------------------------------------------------


def test_tactile_classify_zero_scan(tmp_path, capsys):
    save_heightfield(Heightfield.zeros(64, 64), tmp_path / "z.hfld")
    (tmp_path / "spec.json").write_text(json.dumps({}))
    code, out, _ = run(capsys, "tactile", "classify", tmp_path / "z.hfld", "--spec", tmp_path / "spec.json")
    assert code == 0 and json.loads(out)["label"] == "no_defect"


def test_tactile_classify_scratch_table(tmp_path, capsys):
    hf = stamp_defect(Heightfield.zeros(256, 256), scratch_specimen(0.05, 0.1, 35.0))
    save_heightfield(hf, tmp_path / "s.hfld")
    code, out, _ = run(capsys, "--format", "table", "tactile", "classify", tmp_path / "s.hfld")
    assert code == 0 and "scratch" in out


def test_unreadable_scan_is_a_domain_error(tmp_path, capsys):
    (tmp_path / "bad.hfld").write_bytes(b"HFLD\x00")
    code, out, err = run(capsys, "tactile", "classify", tmp_path / "bad.hfld")
    assert code == 1 and out == "" and err.startswith("error: ") and err.count("\n") == 1


# --- vision ----------------------------------------------------------------------------


def test_eval_with_perfect_predictions(tmp_path, gt_dir, capsys):
    dets = [Detection(BoundingBox(10, 20, 110, 90), DefectClass.SCRATCH, 0.9, "img"),
            Detection(BoundingBox(300, 300, 340, 340), DefectClass.GOUGE, 0.8, "img")]
    write_detections(dets, tmp_path / "d.json")
    code, out, _ = run(capsys, "eval", "--gt", gt_dir, "--pred", tmp_path / "d.json")
    doc = json.loads(out)
    assert code == 0 and doc["mean"]["precision"] == 1.0 and doc["mean"]["recall"] == 1.0


def test_eval_writes_report_file(tmp_path, gt_dir, capsys):
    write_detections([], tmp_path / "d.json")
    code, out, _ = run(capsys, "eval", "--gt", gt_dir, "--pred", tmp_path / "d.json", "--score-cut", "none",
                       "--out", tmp_path / "r.json")
    assert code == 0 and out == ""
    assert json.loads((tmp_path / "r.json").read_text())["counts"]["fn"] == 2


def test_missing_gt_dir_exits_1(tmp_path, capsys):
    write_detections([], tmp_path / "d.json")
    code, _, err = run(capsys, "eval", "--gt", tmp_path / "nope", "--pred", tmp_path / "d.json")
    assert code == 1 and "not a directory" in err


def test_voc_validate(tmp_path, gt_dir, capsys):
    code, out, _ = run(capsys, "voc", "validate", gt_dir)
    assert code == 0 and json.loads(out)["class_histogram"]["gouge"] == 1
    (gt_dir / "broken.xml").write_text("<annotation>")
    code, out, _ = run(capsys, "voc", "validate", gt_dir)
    assert code == 1 and json.loads(out)["errors"][0]["file"] == "broken.xml"


def test_route(tmp_path, capsys):
    dets = [Detection(BoundingBox(0, 0, 5, 5), DefectClass.SCRATCH, s, "a") for s in (0.95, 0.7, 0.1, 0.05)]
    write_detections(dets, tmp_path / "d.json")
    code, out, _ = run(capsys, "route", "--detections", tmp_path / "d.json")
    doc = json.loads(out)
    assert code == 0 and [len(doc[k]) for k in ("confirmed", "delegated", "discarded")] == [1, 2, 1]


def test_augment_translate(tmp_path, capsys):
    save_png(RgbImage.blank(200, 100, 40), tmp_path / "in.png")
    write_voc(GroundTruth("in", (200, 100, 3), [VocObject(DefectClass.GOUGE, BoundingBox(10, 10, 50, 40))]),
              tmp_path / "in.xml")
    code, out, _ = run(capsys, "augment", "--op", "translate", "--image", tmp_path / "in.png", "--voc",
                       tmp_path / "in.xml", "--dx", 100, "--dy", 0, "--out", tmp_path / "o.png",
                       "--out-voc", tmp_path / "o.xml")
    assert code == 0 and json.loads(out)["boxes"][0]["bbox"] == [110, 10, 150, 40]
    assert load_png(tmp_path / "o.png").width == 200
    assert parse_voc(tmp_path / "o.xml").objects[0].bbox == BoundingBox(110, 10, 150, 40)


def test_augment_needs_out(tmp_path, capsys):
    save_png(RgbImage.blank(20, 10), tmp_path / "in.png")
    code, _, err = run(capsys, "augment", "--op", "photometric", "--image", tmp_path / "in.png")
    assert code == 1 and "--out" in err


# --- simulation ------------------------------------------------------------------------


def test_simulate_touch_preset(capsys):
    code, out, _ = run(capsys, "simulate", "--preset", "table3-touch")
    assert code == 0 and json.loads(out)["runtime_s"] == 12977.58


def test_table3_renders_three_rows(capsys):
    code, out, _ = run(capsys, "--format", "table", "simulate", "--preset", "table3")
    lines = out.splitlines()
    assert code == 0 and len(lines) == 5
    assert lines[2].split()[-1] == "13.04" and lines[3].split()[-1] == "12977.58"
    assert lines[4].split()[:2] == ["Two", "stage"] and lines[4].split()[-1] == "168.86"


def test_synth_scene_then_simulate(tmp_path, capsys):
    code, out, _ = run(capsys, "synth", "scene", "--out", tmp_path / "scene")
    assert code == 0 and json.loads(out)["annotations"] == 15
    code, out, _ = run(capsys, "simulate", "--scene", tmp_path / "scene" / "scene.json", "--mode", "vision")
    assert code == 0 and json.loads(out)["counts"] == {"n_rgb": 2, "n_tactile": 0}


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["simulate"])
    assert e.value.code == 2


def test_global_flag_after_command(tmp_path, capsys):
    code, out, _ = run(capsys, "simulate", "--preset", "table3-vision", "--format", "table")
    assert code == 0 and out.startswith("Method")


# --- rendering -------------------------------------------------------------------------


def test_empty_report_renders_not_applicable(capsys):
    text = emit_report(EvalReport())
    assert capsys.readouterr().out == text
    doc = json.loads(text)
    assert doc["counts"] == {"tp": 0, "fp": 0, "fn": 0} and doc["mean"]["recall"] is None
    assert "n/a" in render_table(EvalReport())


def test_rendering_is_byte_identical(tmp_path):
    cm = confusion_matrix([DefectClass.SCRATCH, DefectClass.GOUGE], [DefectClass.SCRATCH, DefectClass.SCRATCH])
    emit_report(cm, "json", tmp_path / "a.json")
    emit_report(cm, "json", tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert render_json(cm) == (tmp_path / "a.json").read_text()


def test_non_finite_values_are_refused():
    with pytest.raises(ValueError):
        render_json({"x": float(np.nan)})


def test_unknown_format_rejected():
    with pytest.raises(ValueError):
        emit_report({}, "yaml")
