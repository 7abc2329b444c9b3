import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vtinspect.defects import DefectClass
from vtinspect.vision import (
    BoundingBox,
    Detection,
    DetectionParseError,
    PhotometricParams,
    RgbImage,
    RoutingConfig,
    augment_cut_and_paste,
    augment_photometric,
    augment_translate,
    load_png,
    parse_detections,
    route_detections,
    save_png,
    write_detections,
)


def _det(score, cls=DefectClass.SCRATCH, box=(0, 0, 10, 10), image_id="a"):
    return Detection(BoundingBox(*box), cls, score, image_id)


# --- boxes and detections --------------------------------------------------------------


@pytest.mark.parametrize("box", [(5, 0, 5, 10), (10, 0, 0, 10), (0, float("nan"), 1, 1)])
def test_bad_boxes_rejected(box):
    with pytest.raises(ValueError):
        BoundingBox(*box)


def test_detection_rejects_no_defect_and_bad_scores():
    with pytest.raises(ValueError):
        _det(0.5, DefectClass.NO_DEFECT)
    with pytest.raises(ValueError):
        _det(1.3)


def test_parse_detections_groups_by_image(tmp_path):
    recs = [
        {"image_id": "a", "class": "scratch", "bbox": [0, 0, 10, 10], "score": 0.9},
        {"image_id": "b", "class": "drillrun", "bbox": [1, 1, 4, 4], "score": 0.2},
        {"image_id": "a", "class": "Gouge", "bbox": [5, 5, 9, 9], "score": 0.4},
    ]
    p = tmp_path / "d.json"
    p.write_text(json.dumps(recs))
    dets = parse_detections(p)
    assert sorted(dets) == ["a", "b"]
    assert [d.cls for d in dets["a"]] == [DefectClass.SCRATCH, DefectClass.GOUGE]
    assert dets["b"][0].cls is DefectClass.DRILL_RUN


@pytest.mark.parametrize(
    "records, fragment",
    [
        ([{"image_id": "a", "class": "scratch", "bbox": [0, 0, 1, 1], "score": 1.3}], "record 0"),
        ([{"image_id": "a", "class": "scratch", "bbox": [0, 0, 1, 1], "score": 0.5},
          {"image_id": "a", "class": "dent", "bbox": [0, 0, 1, 1], "score": 0.5}], "record 1"),
        ([{"image_id": "a", "class": "scratch", "bbox": [0, 0, 1], "score": 0.5}], "bbox"),
        ([{"image_id": "a", "bbox": [0, 0, 1, 1], "score": 0.5}], "missing fields"),
        ({"not": "a list"}, "JSON array"),
    ],
)
def test_parse_detections_errors_are_located(tmp_path, records, fragment):
    p = tmp_path / "d.json"
    p.write_text(json.dumps(records))
    with pytest.raises(DetectionParseError, match=fragment):
        parse_detections(p)


def test_malformed_json_reports_line(tmp_path):
    p = tmp_path / "d.json"
    p.write_text('[\n{"image_id": "a",\n')
    with pytest.raises(DetectionParseError, match="line"):
        parse_detections(p)


def test_detections_write_parse_round_trip(tmp_path):
    dets = [_det(0.25, DefectClass.GOUGE, (1.5, 2.25, 30.125, 40.0), "v"), _det(0.875, image_id="w")]
    write_detections(dets, tmp_path / "d.json")
    back = parse_detections(tmp_path / "d.json")
    assert back["v"] + back["w"] == dets


# --- routing ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "score, bucket",
    [(0.7, "delegated"), (np.nextafter(0.7, 1), "confirmed"), (0.1, "delegated"),
     (np.nextafter(0.1, 0), "discarded"), (1.0, "confirmed"), (0.0, "discarded"), (0.4, "delegated")],
)
def test_routing_boundaries(score, bucket):
    res = route_detections([_det(float(score))])
    assert len(getattr(res, bucket)) == 1


def test_routing_config_order_checked():
    with pytest.raises(ValueError):
        RoutingConfig(0.3, 0.5)


@given(st.lists(st.floats(0, 1), max_size=60))
def test_routing_is_an_order_preserving_partition(scores):
    dets = [_det(s) for s in scores]
    res = route_detections(dets)
    assert len(res.confirmed) + len(res.delegated) + len(res.discarded) == len(dets)
    for bucket in (res.confirmed, res.delegated, res.discarded):
        pos = [next(i for i, d in enumerate(dets) if d is b) for b in bucket]
        assert pos == sorted(pos)


# --- photometric -----------------------------------------------------------------------


def _noise_image(seed=0, w=40, h=30):
    return RgbImage(np.random.default_rng(seed).integers(0, 256, (h, w, 3), dtype=np.uint8))


def test_identity_params_leave_image_unchanged():
    img = _noise_image()
    assert augment_photometric(img, PhotometricParams()) == img


def test_brightness_on_mid_gray():
    out = augment_photometric(RgbImage.blank(8, 8, 100), PhotometricParams(brightness=1.5))
    assert np.all(out.pixels == 150)


def test_brightness_saturates_at_255():
    out = augment_photometric(RgbImage.blank(4, 4, 200), PhotometricParams(brightness=1.5))
    assert np.all(out.pixels == 255)


@pytest.mark.parametrize("kw", [{"brightness": 1.6}, {"contrast": 0.4}, {"saturation": 2.0}, {"hue": 20.0}])
def test_out_of_range_factors_rejected(kw):
    with pytest.raises(ValueError):
        PhotometricParams(**kw)


def test_gray_image_is_hue_and_saturation_invariant():
    img = RgbImage.blank(6, 6, 128)
    out = augment_photometric(img, PhotometricParams(saturation=1.4, hue=15.0))
    assert np.abs(out.pixels.astype(int) - 128).max() <= 1


def test_seeded_photometric_is_reproducible():
    img = _noise_image(3)
    assert augment_photometric(img, seed=9) == augment_photometric(img, seed=9)


# --- translate -------------------------------------------------------------------------


def test_translate_moves_box_and_pixels():
    img = _noise_image(1, 200, 100)
    out, boxes = augment_translate(img, [BoundingBox(10, 10, 50, 40)], 100, 0)
    assert boxes == [BoundingBox(110, 10, 150, 40)]
    assert np.array_equal(out.pixels[:, 100:], img.pixels[:, :100])
    assert not out.pixels[:, :100].any()


def test_translate_drops_mostly_hidden_box():
    img = RgbImage.blank(200, 100)
    out, boxes = augment_translate(img, [BoundingBox(150, 10, 200, 40)], 45, 0)
    assert boxes == []  # 90% of the box leaves the frame


def test_translate_clips_partially_visible_box():
    _, boxes = augment_translate(RgbImage.blank(200, 100), [BoundingBox(150, 10, 200, 40)], 25, 0)
    assert boxes == [BoundingBox(175, 10, 200, 40)]


def test_translate_rejects_shift_past_image():
    with pytest.raises(ValueError):
        augment_translate(RgbImage.blank(20, 10), [], 20, 0)


# --- cut and paste ---------------------------------------------------------------------


def test_cut_and_paste_adds_patch():
    src = _noise_image(5, 200, 150)
    dst = RgbImage.blank(1280, 800, 7)
    patch = BoundingBox(20, 30, 60, 60)
    out, boxes = augment_cut_and_paste(src, [patch], dst, [], seed=4)
    assert len(boxes) == 1
    b = boxes[0]
    assert (b.width, b.height) == (40, 30)
    x, y = int(b.xmin), int(b.ymin)
    assert np.array_equal(out.pixels[y:y + 30, x:x + 40], src.pixels[30:60, 20:60])
    assert (out.pixels != 7).any(axis=2).sum() <= 40 * 30


def test_cut_and_paste_avoids_existing_boxes_and_is_deterministic():
    src = _noise_image(6, 100, 100)
    dst = RgbImage.blank(300, 200)
    existing = [BoundingBox(0, 0, 150, 200)]
    a = augment_cut_and_paste(src, [BoundingBox(0, 0, 30, 30)], dst, existing, seed=1)
    b = augment_cut_and_paste(src, [BoundingBox(0, 0, 30, 30)], dst, existing, seed=1)
    assert a[0] == b[0] and a[1] == b[1]
    assert a[1][0] == existing[0] and not a[1][1].overlaps(existing[0])


def test_cut_and_paste_skips_patch_with_no_room():
    src = _noise_image(7, 50, 50)
    dst = RgbImage.blank(60, 60)
    out, boxes = augment_cut_and_paste(src, [BoundingBox(0, 0, 40, 40)], dst, [BoundingBox(10, 10, 50, 50)], seed=0)
    assert out == dst and len(boxes) == 1


# --- images ----------------------------------------------------------------------------


def test_png_round_trip(tmp_path):
    img = _noise_image(2, 33, 17)
    save_png(img, tmp_path / "x.png")
    assert load_png(tmp_path / "x.png") == img


def test_image_shape_checked():
    with pytest.raises(ValueError):
        RgbImage(np.zeros((4, 4)))
