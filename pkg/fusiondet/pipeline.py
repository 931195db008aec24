import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Tuple

from fusiondet.config import PipelineConfig, load_env_from_file
from fusiondet.evaluation import EvalReport, evaluate
from fusiondet.exceptions import ConfigError, FusionDetError, PipelineStageError
from fusiondet.fusionnet import (
    FusionNetParams,
    build_training_set,
    fusion_inputs,
    init_params,
    predict,
    train,
)
from fusiondet.io import SceneDataset
from fusiondet.merge import count_cross_duplicates, merge_detections, nms
from fusiondet.models import (
    PRESET_PARTITIONS,
    ClassPartition,
    Detection,
    SceneHeader,
    SceneRecord,
    Source,
)
from fusiondet.pseudolabel import (
    log_pseudo_label_counts,
    mine_scene,
    pseudo_label_counts,
)
from fusiondet.segregation import SegregationResult, segregate_scene


@dataclass
class SceneInference:
    image_id: str
    segregation: SegregationResult
    base: List[Detection]
    novel: List[Detection]
    fusion: List[Detection]
    final: List[Detection]


@dataclass
class PipelineResult:
    params: FusionNetParams
    detections: Dict[str, List[Detection]]
    report: EvalReport
    duplicates_before: int
    duplicates_after: int
    loss_trace: List[float] = field(default_factory=list)
    baselines: Dict[str, EvalReport] = field(default_factory=dict)
    pseudo_label_counts: Dict[str, int] = field(default_factory=dict)


def branch_dims(header: SceneHeader) -> Tuple[int, int]:
    partition = header.partition
    dims = []
    for source in (Source.base, Source.novel):
        spec = header.detector(source)
        dims.append(
            spec.feature_dim + spec.logits_dim(partition.num_source_classes(source)) + 4
        )
    return dims[0], dims[1]


def naive_union(scene: SceneRecord) -> List[Detection]:
    return list(scene.base_output.detections) + list(scene.novel_output.detections)


class FusionPipeline:
    def __init__(
        self,
        header: SceneHeader,
        config: PipelineConfig = None,
        logger: logging.Logger = None,
        debug: bool = False,
    ):
        self.header = header
        self.partition: ClassPartition = header.partition
        self.config = config or PipelineConfig()

        # logging setup #
        self.log = logger
        self.debug = debug
        level = None if not self.debug else "DEBUG"
        self.setup_logger(logger=self.log, level=level)
        self.check_preset()

    @classmethod
    def create(
        cls,
        header: SceneHeader,
        config: PipelineConfig = None,
        logger: logging.Logger = None,
        debug: bool = False,
        env_from_file: str = None,
    ):
        if env_from_file:
            load_env_from_file(env_from_file, log=logger)
        return cls(header, config or PipelineConfig(), logger, debug)

    def setup_logger(self, logger=None, level=None):
        if logger is None:
            level = logging.DEBUG if level == "DEBUG" else logging.WARNING
            logging.basicConfig(
                level=level,
                format="%(asctime)s %(name)-12s %(levelname)-8s %(message)s",
                datefmt="%m-%d %H:%M",
            )
            self.log = logging.getLogger("FusionPipeline")
            self.log.setLevel(level)
        else:
            self.log = logger

    def _per_scene(
        self, stage: str, scenes: Sequence[SceneRecord], func: Callable[[SceneRecord], object]
    ) -> list:
        def guarded(scene: SceneRecord):
            try:
                return func(scene)
            except FusionDetError as e:
                if isinstance(e, PipelineStageError):
                    raise
                raise PipelineStageError(stage, scene.image_id, e)
            except (ValueError, ArithmeticError) as e:
                raise PipelineStageError(stage, scene.image_id, e)

        if self.config.workers == 1:
            return [guarded(scene) for scene in scenes]
        # map preserves input order
        with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
            return list(pool.map(guarded, scenes))

    def check_preset(self):
        preset = self.config.preset
        if preset is not None and PRESET_PARTITIONS[preset] != self.partition:
            raise ConfigError(
                f"preset {preset!r} expects the {preset} class partition, "
                "the scenes header declares a different one"
            )

    def check_header(self, dataset: SceneDataset):
        if dataset.header != self.header:
            raise ConfigError(
                "scenes file header (partition / detector specs) does not match the pipeline"
            )

    def mine(self, scenes: Sequence[SceneRecord]) -> List[SceneRecord]:
        cfg = self.config.mining_config()
        mined = self._per_scene(
            "mine", scenes, lambda scene: mine_scene(scene, self.partition, cfg)
        )
        counts = pseudo_label_counts(mined, self.partition)
        log_pseudo_label_counts(counts, self.log)
        return mined

    def initial_params(self) -> FusionNetParams:
        base_dim, novel_dim = branch_dims(self.header)
        return init_params(
            base_dim,
            novel_dim,
            self.partition.num_classes,
            hidden_dim=self.config.hidden_dim,
            trunk_dim=self.config.trunk_dim,
            seed=self.config.seed,
        )

    def train(self, mined_scenes: Sequence[SceneRecord]) -> Tuple[FusionNetParams, List[float]]:
        try:
            dataset = build_training_set(
                mined_scenes, self.partition, self.config.tau, self.config.match_iou
            )
        except FusionDetError as e:
            raise PipelineStageError("build_training_set", "", e)
        params = self.initial_params()
        if not dataset:
            self.log.warning("no overlapping proposals in training scenes, fusion head left untrained")
            return params, []
        self.log.warning(f"training fusion network on {len(dataset)} overlapping proposals")
        try:
            result = train(params, dataset, self.config.training_config(), log=self.log)
        except FusionDetError as e:
            raise PipelineStageError("train", "", e)
        return result.params, result.loss_trace

    def infer_scene(self, params: FusionNetParams, scene: SceneRecord) -> SceneInference:
        segregation = segregate_scene(scene, self.config.tau)
        valid_base, valid_novel = set(segregation.valid_base), set(segregation.valid_novel)
        base = [d for d in scene.base_output.detections if d.proposal_index in valid_base]
        novel = [d for d in scene.novel_output.detections if d.proposal_index in valid_novel]

        inputs = [fusion_input for _, fusion_input in fusion_inputs(scene, segregation)]
        fusion = nms(
            predict(params, inputs, self.config.fusion_score_thresh),
            self.config.fusion_nms_iou,
        )
        final = merge_detections(base + novel + fusion, self.config.cross_iou)
        return SceneInference(scene.image_id, segregation, base, novel, fusion, final)

    def infer(
        self, params: FusionNetParams, scenes: Sequence[SceneRecord]
    ) -> Dict[str, List[Detection]]:
        results = self._per_scene(
            "infer", scenes, lambda scene: self.infer_scene(params, scene)
        )
        return {r.image_id: r.final for r in results}

    def evaluate(
        self, scenes: Sequence[SceneRecord], detections: Dict[str, Sequence[Detection]]
    ) -> EvalReport:
        try:
            return evaluate(scenes, detections, self.partition)
        except FusionDetError as e:
            raise PipelineStageError("evaluate", "", e)

    def baseline_reports(self, scenes: Sequence[SceneRecord]) -> Dict[str, EvalReport]:
        return {
            "base_only": self.evaluate(
                scenes, {s.image_id: s.base_output.detections for s in scenes}
            ),
            "novel_only": self.evaluate(
                scenes, {s.image_id: s.novel_output.detections for s in scenes}
            ),
            "naive_union": self.evaluate(scenes, {s.image_id: naive_union(s) for s in scenes}),
        }

    def run(self, train_set: SceneDataset, test_set: SceneDataset) -> PipelineResult:
        self.check_header(train_set)
        self.check_header(test_set)

        mined = self.mine(train_set.scenes)
        params, loss_trace = self.train(mined)
        detections = self.infer(params, test_set.scenes)
        report = self.evaluate(test_set.scenes, detections)

        iou = self.config.cross_iou
        before = sum(count_cross_duplicates(naive_union(s), iou) for s in test_set.scenes)
        after = sum(count_cross_duplicates(dets, iou) for dets in detections.values())
        self.log.warning(f"base-novel double detections: naive union {before}, merged {after}")

        return PipelineResult(
            params=params,
            detections=detections,
            report=report,
            duplicates_before=before,
            duplicates_after=after,
            loss_trace=loss_trace,
            baselines=self.baseline_reports(test_set.scenes),
            pseudo_label_counts=pseudo_label_counts(mined, self.partition),
        )


def run_pipeline(
    scenes_train: SceneDataset,
    scenes_test: SceneDataset,
    cfg: PipelineConfig = None,
    logger: logging.Logger = None,
    debug: bool = False,
) -> PipelineResult:
    pipeline = FusionPipeline.create(scenes_train.header, cfg, logger=logger, debug=debug)
    return pipeline.run(scenes_train, scenes_test)
