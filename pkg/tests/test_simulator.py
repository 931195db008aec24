import numpy as np
import pytest
from pydantic import ValidationError

from fusiondet.evaluation import evaluate
from fusiondet.geometry import iou
from fusiondet.io import write_scenes
from fusiondet.merge import count_cross_duplicates
from fusiondet.models import COCO_PARTITION, IDD_PARTITION, Provenance, Source
from fusiondet.pipeline import naive_union
from fusiondet.segregation import segregate_scene
from fusiondet.simulator import (
    CANVAS_HEIGHT,
    CANVAS_WIDTH,
    SimConfig,
    count_confusable_objects,
    generate,
    generate_scene,
    make_prototypes,
)


def test_default_partition_is_idd():
    assert SimConfig().class_partition() == IDD_PARTITION
    small = SimConfig(n_base=2, n_novel=2).class_partition()
    assert small.names == ["base_0", "base_1", "novel_0", "novel_1"]


def test_scenes_are_valid(confusable_dataset):
    header = confusable_dataset.header
    for s in confusable_dataset.scenes:
        assert header.validate_scene(s) == []
        assert (s.width, s.height) == (CANVAS_WIDTH, CANVAS_HEIGHT)
        lo, hi = 2, 6
        assert lo <= len(s.ground_truth) <= hi
        for det in s.base_output.detections + s.novel_output.detections:
            assert det.proposal_index is not None


def test_generation_is_deterministic(confusable_sim):
    assert generate(confusable_sim)[:5] == generate(confusable_sim)[:5]
    assert generate_scene(confusable_sim, 3) == generate(confusable_sim)[3]
    other = confusable_sim.copy(update={"seed": 99})
    assert generate_scene(other, 0) != generate_scene(confusable_sim, 0)


def test_no_confusable_pairs_means_no_overlap(disjoint_sim):
    for s in generate(disjoint_sim):
        assert segregate_scene(s).overlapping == []
        assert count_cross_duplicates(naive_union(s), 0.5) == 0


def test_confusable_objects_are_doubly_detected(confusable_sim, confusable_dataset):
    scenes = confusable_dataset.scenes
    confusable = count_confusable_objects(scenes, confusable_sim)
    assert confusable > 0
    duplicates = sum(count_cross_duplicates(naive_union(s), 0.5) for s in scenes)
    assert duplicates >= confusable


def test_confused_detection_is_less_confident(confusable_sim):
    partners = {9: 10, 3: 11, 0: 12, 2: 13}
    for s in generate(confusable_sim):
        for g in s.ground_truth:
            if g.class_id not in partners and g.class_id not in partners.values():
                continue
            own = Source.base if IDD_PARTITION.is_base(g.class_id) else Source.novel
            mine = [d for d in s.output(own).detections if iou(d.box, g.box) > 0.5]
            theirs = [d for d in s.output(own.other).detections if iou(d.box, g.box) > 0.5]
            assert [d.class_id for d in mine] == [g.class_id]
            assert all(d.provenance is Provenance(own.other.value) for d in theirs)
            if theirs:
                assert mine[0].score > max(d.score for d in theirs)


@pytest.mark.parametrize(
    "values",
    [
        {"confusable_pairs": [[0, 3]]},
        {"confusable_pairs": [[10, 11]]},
        {"objects_per_scene": [5, 2]},
        {"objects_per_scene": [2, 30]},
        {"detector_miss_rate": 1.5},
        {"scenes": 0},
    ],
)
def test_invalid_configs(values):
    with pytest.raises(ValidationError):
        SimConfig.parse_obj(values)


def test_header_matches_config():
    cfg = SimConfig(base_feature_dim=8, novel_feature_dim=5)
    header = cfg.header()
    assert header.base_detector.feature_dim == 8
    assert header.novel_detector.feature_dim == 5
    assert header.partition == IDD_PARTITION


def test_detectors_do_not_depend_on_scene_seed(confusable_sim):
    held_out = confusable_sim.copy(update={"seed": confusable_sim.seed + 1})
    shared, other = make_prototypes(confusable_sim), make_prototypes(held_out)
    for source in (Source.base, Source.novel):
        np.testing.assert_array_equal(shared[source], other[source])
    assert generate_scene(held_out, 0) != generate_scene(confusable_sim, 0)

    retrained = confusable_sim.copy(update={"detector_seed": 1})
    assert not np.allclose(make_prototypes(retrained)[Source.base], shared[Source.base])


def test_held_out_features_stay_near_training_prototypes(confusable_sim):
    prototypes = make_prototypes(confusable_sim)
    held_out = confusable_sim.copy(update={"seed": 99, "scenes": 10})
    for s in generate(held_out):
        for g in s.ground_truth:
            own = Source.base if IDD_PARTITION.is_base(g.class_id) else Source.novel
            [p] = [p for p in s.output(own).proposals if iou(p.box, g.box) > 0.5 and p.objectness >= 0.8]
            distances = np.linalg.norm(prototypes[own] - np.asarray(p.feature), axis=1)
            assert int(np.argmin(distances)) == g.class_id
            assert distances[g.class_id] < 10 * held_out.feature_noise


def test_empty_scenes_hold_background_only():
    cfg = SimConfig(scenes=3, objects_per_scene=(0, 0), background_proposal_rate=1.0)
    for s in generate(cfg):
        assert s.ground_truth == []
        for output in (s.base_output, s.novel_output):
            assert len(output.proposals) == cfg.background_slots
            assert all(p.objectness < 0.3 for p in output.proposals)
            assert output.detections == []


def test_noise_free_detectors_are_perfect():
    cfg = SimConfig(scenes=30, feature_noise=0.0, box_jitter=0.0, seed=13)
    scenes = generate(cfg)
    report = evaluate(scenes, {s.image_id: naive_union(s) for s in scenes}, cfg.class_partition())
    assert report.map50_all == pytest.approx(1.0, abs=1e-12)

    # nearest prototype recovers every object's class
    prototypes = make_prototypes(cfg)
    for s in scenes:
        for g in s.ground_truth:
            own = Source.base if cfg.class_partition().is_base(g.class_id) else Source.novel
            [p] = [p for p in s.output(own).proposals if iou(p.box, g.box) > 0.99]
            distances = np.linalg.norm(prototypes[own] - np.asarray(p.feature), axis=1)
            assert int(np.argmin(distances)) == g.class_id


def test_fixed_seed_writes_identical_files(confusable_sim, tmp_path):
    first, second = str(tmp_path / "a.jsonl"), str(tmp_path / "b.jsonl")
    write_scenes(first, confusable_sim.header(), generate(confusable_sim))
    write_scenes(second, confusable_sim.header(), generate(confusable_sim))
    with open(first, "rb") as a, open(second, "rb") as b:
        assert a.read() == b.read()


def test_presets_select_partition():
    coco = SimConfig(preset="coco", scenes=3)
    assert coco.class_partition() == COCO_PARTITION
    assert (coco.n_base, coco.n_novel) == (60, 20)
    header = coco.header()
    for s in generate(coco):
        assert header.validate_scene(s) == []

    assert SimConfig(preset="idd").class_partition() == IDD_PARTITION
    explicit = SimConfig(preset="coco", n_base=3, n_novel=1).class_partition()
    assert explicit.names == ["base_0", "base_1", "base_2", "novel_0"]
    with pytest.raises(ValidationError):
        SimConfig(preset="voc")
