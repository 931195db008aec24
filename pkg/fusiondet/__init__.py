from fusiondet.config import PipelineConfig, load_config
from fusiondet.evaluation import EvalReport, evaluate
from fusiondet.exceptions import FusionDetError
from fusiondet.fusionnet import FusionNetParams, forward, init_params, train
from fusiondet.geometry import Box, ioa, iou
from fusiondet.merge import merge_detections
from fusiondet.models import (
    ClassPartition,
    Detection,
    GroundTruthObject,
    Proposal,
    Provenance,
    SceneHeader,
    SceneRecord,
    Source,
)
from fusiondet.pipeline import FusionPipeline, run_pipeline
from fusiondet.pseudolabel import mine_pseudo_labels
from fusiondet.segregation import segregate
