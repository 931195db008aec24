import pytest
from pydantic import ValidationError

from fusiondet.exceptions import UnknownClassError
from fusiondet.models import (
    ClassPartition,
    DetectorSpec,
    Provenance,
    Source,
    class_id_of,
    strip_base_ground_truth,
    validate_scene,
)
from tests.builders import FEATURE_DIM, detection, gt, proposal, scene


def test_partition_ids(partition):
    assert partition.num_classes == 4
    assert partition.background_id == 4
    assert class_id_of(partition, "car") == 0
    assert class_id_of(partition, "tractor") == 2
    assert partition.base_ids() == [0, 1]
    assert partition.novel_ids() == [2, 3]
    assert partition.to_global(Source.novel, 1) == 3
    assert partition.is_base(1) and partition.is_novel(2)
    assert not partition.is_novel(4)


def test_unknown_class(partition):
    with pytest.raises(UnknownClassError) as e:
        partition.class_id_of("zebra")
    assert "zebra" in str(e.value)
    assert e.value.exit_code == 3


@pytest.mark.parametrize(
    "base, novel",
    [([], ["a"]), (["a"], []), (["a", "b"], ["b"]), (["a", "a"], ["c"])],
)
def test_partition_rejects_bad_lists(base, novel):
    with pytest.raises(ValidationError):
        ClassPartition(base_classes=base, novel_classes=novel)


def test_idd_partition(idd_partition):
    assert idd_partition.num_base == 10
    assert idd_partition.num_novel == 4
    assert idd_partition.class_name(10) == "tractor"


def test_logits_dim():
    assert DetectorSpec(feature_dim=4).logits_dim(3) == 3
    assert DetectorSpec(feature_dim=4, background_logit=True).logits_dim(3) == 4
    with pytest.raises(ValidationError):
        DetectorSpec(feature_dim=0)


def test_valid_scene_has_no_violations(partition, hand_scene):
    assert validate_scene(hand_scene, partition, FEATURE_DIM, FEATURE_DIM) == []


def test_validate_scene_reports_field_paths(partition):
    s = scene(
        ground_truth=[gt((0, 0, 10, 10), 9)],
        base_proposals=[
            proposal((0, 0, 10, 10)),
            proposal((5, 5, 5, 9)),
            proposal((0, 0, 4, 4), feature=[1.0]),
        ],
        novel_proposals=[proposal((0, 0, 10, 10), Source.novel, logits=[0.0])],
        base_detections=[
            detection((0, 0, 10, 10), 2, 0.9, Provenance.base, 0),
            detection((0, 0, 10, 10), 0, 0.9, Provenance.base, 7),
        ],
    )
    violations = validate_scene(s, partition, FEATURE_DIM, FEATURE_DIM)
    joined = "\n".join(violations)
    assert "ground_truth[0].class_id" in joined
    assert "zero-area box at base_output.proposals[1].box" in joined
    assert "base_output.proposals[2].feature" in joined
    assert "novel_output.proposals[0].logits" in joined
    assert "base_output.detections[0].class_id" in joined
    assert "base_output.detections[1].proposal_index" in joined


def test_validate_scene_background_logit(partition):
    s = scene(base_proposals=[proposal((0, 0, 5, 5), logits=[0.0, 0.0, 0.0])])
    assert validate_scene(s, partition, FEATURE_DIM, FEATURE_DIM) != []
    assert (
        validate_scene(s, partition, FEATURE_DIM, FEATURE_DIM, base_background_logit=True)
        == []
    )


def test_validate_scene_source_mismatch(partition):
    s = scene(base_proposals=[proposal((0, 0, 5, 5), Source.novel, logits=[0.0, 0.0])])
    assert any("source tag" in v for v in validate_scene(s, partition, 3, 3))


def test_strip_base_ground_truth(partition):
    s = scene(ground_truth=[gt((0, 0, 5, 5), 0), gt((10, 10, 20, 20), 3)])
    stripped = strip_base_ground_truth(s, partition)
    assert [g.class_id for g in stripped.ground_truth] == [3]
    assert len(s.ground_truth) == 2
