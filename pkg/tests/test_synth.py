import json
from collections import Counter

import numpy as np
import pytest

from vtinspect.defects import DefectClass
from vtinspect.heightfield import Heightfield, LineSegment2D, extract_profile, local_minima
from vtinspect.synth import (
    TACTILE_SUITE_COUNTS,
    SceneRecipe,
    add_trend_and_noise,
    bump_centres,
    drill_run_specimen,
    generate_scene,
    generate_tactile_suite,
    gouge_specimen,
    load_scene,
    scene_document,
    scratch_specimen,
    stamp_defect,
    write_scene_fixtures,
)
from vtinspect.voc import load_voc_dir


def _zero(size=256):
    return Heightfield.zeros(size, size)


# --- stamping --------------------------------------------------------------------------


def test_scratch_minimum_is_exact_on_axis():
    spec = scratch_specimen(0.05, 0.1, 0.0, 180, center=(127.0, 127.0))
    d = stamp_defect(_zero(), spec).data
    assert d.min() == pytest.approx(-0.05, abs=1e-7)
    assert np.unravel_index(np.argmin(d), d.shape)[0] == 127


def test_gouge_is_circularly_symmetric():
    spec = gouge_specimen(0.04, 0.4, center=(127.5, 127.5))
    d = stamp_defect(_zero(), spec).data.astype(np.float64)
    assert d.min() == pytest.approx(-0.04, abs=2e-3)
    assert np.allclose(d, d.T, atol=1e-7) and np.allclose(d, d[::-1, :], atol=1e-7)


def test_drill_run_profiles():
    spec = drill_run_specimen(0.04, 0.02, 6, 0.12, 0.4, 0.0, center=(127.5, 127.5))
    hf = stamp_defect(_zero(), spec)
    axis = spec.geometry.axis
    along = extract_profile(hf, axis)
    assert len(local_minima(along.samples, prominence=0.005)) == 6
    cx, _ = bump_centres(spec.geometry, hf.pitch_x, hf.pitch_y)[0]
    across = extract_profile(hf, LineSegment2D((cx, 60.0), (cx, 195.0)))
    assert len(local_minima(across.samples, prominence=0.005)) >= 1


def test_stamping_is_subtractive():
    spec = scratch_specimen(0.03, 0.1, 45.0)
    base = add_trend_and_noise(_zero(), (0.001, 0.0), noise_sigma=0.002, seed=1)
    diff = stamp_defect(base, spec).data.astype(np.float64) - stamp_defect(_zero(), spec).data
    assert np.allclose(diff, base.data, atol=1e-6)
    assert (stamp_defect(_zero(), spec).data <= 0).all()


def test_specimen_outside_field_rejected():
    spec = scratch_specimen(0.03, 0.1, 0.0, 180, size=256, center=(20.0, 128.0))
    with pytest.raises(ValueError, match="outside"):
        stamp_defect(_zero(), spec)


@pytest.mark.parametrize("args", [(0.0, 0.1), (0.05, -0.1)])
def test_non_positive_specimen_rejected(args):
    with pytest.raises(ValueError):
        scratch_specimen(*args)


# --- trend and noise -------------------------------------------------------------------


def test_zero_trend_is_identity():
    hf = stamp_defect(_zero(), scratch_specimen(0.05, 0.1))
    assert add_trend_and_noise(hf) is hf


def test_tilt_adds_a_plane():
    d = add_trend_and_noise(Heightfield.zeros(10, 6), (0.002, -0.001)).data
    assert d[0, 0] == 0 and d[0, 9] == pytest.approx(0.018) and d[5, 0] == pytest.approx(-0.005)


def test_noise_replays_with_the_seed():
    a = add_trend_and_noise(_zero(64), noise_sigma=0.002, seed=4)
    b = add_trend_and_noise(_zero(64), noise_sigma=0.002, seed=4)
    c = add_trend_and_noise(_zero(64), noise_sigma=0.002, seed=5)
    assert a == b and a != c
    assert float(np.std(a.data)) == pytest.approx(0.002, rel=0.05)


def test_non_finite_trend_rejected():
    with pytest.raises(ValueError):
        add_trend_and_noise(_zero(8), (float("nan"), 0.0))


# --- tactile suite ---------------------------------------------------------------------


def test_suite_counts():
    suite = generate_tactile_suite()
    assert len(suite) == 59
    assert Counter(f.label for f in suite) == TACTILE_SUITE_COUNTS
    assert len({f.name for f in suite}) == 59


def test_suite_geometry_is_shared_across_noise_seeds():
    a = generate_tactile_suite({DefectClass.SCRATCH: 2}, noise_sigma=0.002, noise_seed=0)
    b = generate_tactile_suite({DefectClass.SCRATCH: 2}, noise_sigma=0.002, noise_seed=1)
    assert [f.specimen for f in a] == [f.specimen for f in b]
    assert a[0].heightfield != b[0].heightfield


# --- scenes ----------------------------------------------------------------------------


def test_replica_scene_has_fifteen_boxes():
    scene, plan, gts = generate_scene(SceneRecipe(), seed=0)
    assert len(plan) == 2 and sorted(gts) == ["view_000", "view_001"]
    kinds = Counter(o.kind for g in gts.values() for o in g.objects)
    assert kinds == {DefectClass.SCRATCH: 7, DefectClass.GOUGE: 7, DefectClass.DRILL_RUN: 1}
    assert all(g.image_size == (1280, 800, 3) for g in gts.values())


def test_empty_recipe_gives_empty_ground_truth():
    scene, _, gts = generate_scene(SceneRecipe(counts={}), seed=3)
    assert scene.defects == [] and all(g.objects == [] for g in gts.values())


def test_scene_is_deterministic_and_defects_do_not_overlap():
    a, _, ga = generate_scene(SceneRecipe(), seed=11)
    b, _, gb = generate_scene(SceneRecipe(), seed=11)
    assert a.defects == b.defects and ga == gb
    bounds = [d.bounds for d in a.defects]
    for i, p in enumerate(bounds):
        for q in bounds[i + 1:]:
            assert not (p[0] < q[2] and q[0] < p[2] and p[1] < q[3] and q[1] < p[3])


def test_unknown_recipe_field_rejected():
    with pytest.raises(ValueError, match="colour"):
        SceneRecipe.from_dict({"colour": "red"})


def test_scene_document_reloads(tmp_path):
    scene, _, _ = generate_scene(SceneRecipe(counts={"scratch": 2, "gouge": 1}), seed=8)
    p = tmp_path / "scene.json"
    p.write_text(json.dumps(scene_document(scene)))
    back = load_scene(p)
    assert back.defects == scene.defects and back.seed == 8


def test_bare_recipe_with_seed_loads(tmp_path):
    p = tmp_path / "recipe.json"
    p.write_text(json.dumps({"counts": {"gouge": 2}, "seed": 4}))
    assert len(load_scene(p).defects) == 2


def test_scene_fixtures_on_disk(tmp_path):
    summary = write_scene_fixtures(SceneRecipe(), 0, tmp_path)
    assert summary["defects"] == 15 and summary["annotations"] == 15
    gts = load_voc_dir(tmp_path / "annotations")
    assert sum(len(g.objects) for g in gts.values()) == 15
    assert len(list((tmp_path / "tactile").glob("*.hfld"))) == 15
    assert json.loads((tmp_path / "scene.json").read_text())["format"] == "vtinspect-scene/1"
