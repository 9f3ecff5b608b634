import statistics

import numpy as np
import pytest

from xmodal.evaluation import compute_aer
from xmodal.matcher import overlap_match
from xmodal.scene_io import MatchResult, dumps, iou, rescale_box, scene_to_doc, validate_scene
from xmodal.synthgen import (
    DetectionNoise,
    Misalignment,
    SynthConfig,
    config_for_profile,
    dataset_id,
    generate,
    generate_scene,
    identity_attributes,
    read_index,
    severity_profile,
    write_dataset,
)


def quiet(**kw):
    return DetectionNoise(jitter_px=0.0, drop_prob={"RGB": 0.0, "THERMAL": 0.0}, **kw)


def by_identity(scene):
    r = {d.gt_identity: d for d in scene.rgb_detections}
    t = {d.gt_identity: d for d in scene.thermal_detections}
    return r, t


def test_aligned_noiseless_thermal_equals_rescaled_rgb():
    cfg = config_for_profile("aligned", seed=3, n_scenes=20, detection_noise=quiet())
    for scene in generate(cfg):
        r, t = by_identity(scene)
        assert set(r) == set(t)
        for ident, d in r.items():
            mapped = rescale_box(d.bbox, scene.image_size_rgb, scene.image_size_thermal)
            assert t[ident].bbox.to_list() == pytest.approx(mapped.to_list(), abs=1e-9)
        identity = MatchResult.from_pairs(scene, scene.gt_pairs)
        assert compute_aer(scene.gt_pairs, identity)[0] == 0.0
        assert sorted(overlap_match(scene).pairs) == sorted(scene.gt_pairs)


def test_same_seed_is_byte_identical():
    cfg = config_for_profile("heavy", seed=11, n_scenes=5)
    a = [dumps(scene_to_doc(s)) for s in generate(cfg)]
    b = [dumps(scene_to_doc(s)) for s in generate(cfg)]
    assert a == b
    c = [dumps(scene_to_doc(s)) for s in generate(config_for_profile("heavy", seed=12, n_scenes=5))]
    assert a != c


def test_scene_is_independent_of_count():
    cfg = config_for_profile("heavy", seed=5, n_scenes=10)
    assert scene_to_doc(generate(cfg)[7]) == scene_to_doc(generate_scene(cfg, 7))


def test_translation_displacement_bounded():
    cfg = SynthConfig(
        seed=0, n_scenes=250, image_size_rgb=(640, 480), image_size_thermal=(640, 480),
        misalignment=Misalignment(0.4, 0.0, (1.0, 1.0), 0.0),
        detection_noise=DetectionNoise(jitter_px=2.0, drop_prob={"RGB": 0.0, "THERMAL": 0.0}),
    )
    shifts = []
    for scene in generate(cfg):
        r, t = by_identity(scene)
        for ident in set(r) & set(t):
            shifts.append(abs(r[ident].bbox.center[0] - t[ident].bbox.center[0]))
    assert len(shifts) >= 1000
    mean = float(np.mean(shifts))
    assert 0 < mean <= 256 + 2 * 4


def test_profiles():
    assert severity_profile("aligned") == Misalignment(0.0, 0.0, (1.0, 1.0), 0.0)
    heavy = severity_profile("heavy")
    assert heavy.dx_frac == heavy.dy_frac == 0.4 and heavy.scale_range == (0.8, 1.25) and heavy.fov_crop_frac == 0.2
    weak = severity_profile("weak")
    assert weak.dx_frac <= 0.05 and weak.scale_range == (0.98, 1.02)
    with pytest.raises(ValueError):
        severity_profile("extreme")


def test_weak_profile_boxes_overlap():
    ious = []
    for scene in generate(config_for_profile("weak", seed=1, n_scenes=100)):
        r = {d.det_id: d for d in scene.rgb_detections}
        t = {d.det_id: d for d in scene.thermal_detections}
        for a, b in scene.gt_pairs:
            mapped = rescale_box(t[b].bbox, scene.image_size_thermal, scene.image_size_rgb)
            ious.append(iou(r[a].bbox, mapped))
    assert statistics.median(ious) > 0.5


def test_heavy_profile_breaks_overlap():
    ious = []
    for scene in generate(config_for_profile("heavy", seed=1, n_scenes=50)):
        r, t = by_identity(scene)
        for ident in set(r) & set(t):
            mapped = rescale_box(t[ident].bbox, scene.image_size_thermal, scene.image_size_rgb)
            ious.append(iou(r[ident].bbox, mapped))
    assert statistics.median(ious) < 0.5


@pytest.mark.parametrize("profile", ["aligned", "weak", "heavy"])
@pytest.mark.parametrize("seed", [0, 1, 42])
def test_gt_pairs_are_bijection_over_shared_identities(profile, seed):
    for scene in generate(config_for_profile(profile, seed=seed, n_scenes=10)):
        validate_scene(scene)
        r = {d.det_id: d.gt_identity for d in scene.rgb_detections}
        t = {d.det_id: d.gt_identity for d in scene.thermal_detections}
        assert len({a for a, _ in scene.gt_pairs}) == len({b for _, b in scene.gt_pairs}) == len(scene.gt_pairs)
        assert all(r[a] == t[b] for a, b in scene.gt_pairs)
        assert len(scene.gt_pairs) == len(set(r.values()) & set(t.values()))


@pytest.mark.parametrize("profile", ["aligned", "weak"])
def test_no_drop_keeps_everyone(profile):
    cfg = config_for_profile(profile, seed=2, n_scenes=20, persons_per_scene=(5, 5), detection_noise=quiet())
    for scene in generate(cfg):
        assert len(scene.gt_pairs) == 5


def test_ids_and_attributes():
    scene = generate_scene(config_for_profile("heavy", seed=9, n_scenes=1), 0)
    assert [d.det_id for d in scene.rgb_detections] == [f"R{i + 1}" for i in range(len(scene.rgb_detections))]
    assert all(d.gt_identity.startswith("s9/scene_000/p") for d in scene.thermal_detections)
    a = identity_attributes("s9/scene_000/p1")
    assert a == identity_attributes("s9/scene_000/p1")
    assert set(a) == {"clothing", "hairstyle", "accessories", "facing_direction"}
    assert all(0 <= d.confidence <= 1 for d in scene.rgb_detections)


@pytest.mark.parametrize(
    "overrides",
    [
        {"image_size_rgb": (0, 480)},
        {"misalignment": Misalignment(1.5, 0.0)},
        {"misalignment": Misalignment(0.0, 0.0, (0.0, 1.0))},
        {"misalignment": Misalignment(0.0, 0.0, (1.0, 1.0), 1.0)},
        {"detection_noise": DetectionNoise(drop_prob={"RGB": 1.0})},
        {"hallucination_rate": 2.0},
        {"persons_per_scene": (5, 2)},
    ],
)
def test_invalid_configs(overrides):
    with pytest.raises(ValueError):
        generate(SynthConfig(n_scenes=1, **overrides))


def test_write_and_index(tmp_path):
    cfg = config_for_profile("weak", seed=4, n_scenes=3, hallucination_rate=0.3)
    write_dataset(cfg, tmp_path)
    index = read_index(tmp_path)
    assert index["dataset_id"] == dataset_id(cfg) == "synth-weak-seed4"
    assert index["scenes"] == ["scene_000.json", "scene_001.json", "scene_002.json"]
    assert SynthConfig.from_dict(index["config"]) == cfg
    assert read_index(tmp_path / "missing") is None
