"""
Fusion network for regions claimed by both detectors.

Each branch (base, novel) takes feature || logits || normalised predicted box,
applies one linear projection and two affine+SeLU layers. The two branch outputs
are concatenated and passed through two affine+ReLU trunk layers, topped by a
linear class head (|B|+|N|+1 logits, background last) and a class-agnostic
linear box head (4 regression deltas).

All arrays are float64; affine layers compute y = x @ W + b with W shaped
(fan_in, fan_out).
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, validator

from fusiondet.exceptions import (
    DimensionMismatchError,
    EmptyBatchError,
    TrainingDivergedError,
)
from fusiondet.geometry import Box, pairwise_iou
from fusiondet.models import (
    ClassPartition,
    Detection,
    Proposal,
    Provenance,
    SceneRecord,
    Source,
)
from fusiondet.segregation import SegregationResult, segregate_scene

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772

# same clip as two-stage detectors use when decoding width/height deltas
DELTA_CLIP = math.log(1000.0 / 16)

BRANCH_LAYERS = ("proj", "selu1", "selu2")
LAYER_NAMES = tuple(
    f"{branch}_{layer}" for branch in ("base", "novel") for layer in BRANCH_LAYERS
) + ("relu1", "relu2", "class_head", "box_head")


def selu(x):
    if np.isscalar(x):
        return SELU_LAMBDA * x if x > 0 else SELU_LAMBDA * SELU_ALPHA * math.expm1(x)
    x = np.asarray(x, dtype=np.float64)
    return SELU_LAMBDA * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))


def selu_grad(x: np.ndarray) -> np.ndarray:
    return SELU_LAMBDA * np.where(x > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(x, 0.0)))


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    exps = np.exp(shifted)
    return exps / exps.sum(axis=-1, keepdims=True)


def log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def smooth_l1(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    return np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)


def smooth_l1_grad(x: np.ndarray) -> np.ndarray:
    return np.where(np.abs(x) < 1.0, x, np.sign(x))


def encode_deltas(src: Box, dst: Box) -> np.ndarray:
    """Regression target taking src onto dst: (dx/w, dy/h, log w'/w, log h'/h)."""
    sw, sh = src.width, src.height
    scx, scy = src.x1 + 0.5 * sw, src.y1 + 0.5 * sh
    dw, dh = dst.width, dst.height
    dcx, dcy = dst.x1 + 0.5 * dw, dst.y1 + 0.5 * dh
    return np.array(
        [(dcx - scx) / sw, (dcy - scy) / sh, math.log(dw / sw), math.log(dh / sh)],
        dtype=np.float64,
    )


def decode_deltas(src: Box, delta: Sequence[float]) -> Box:
    dx, dy, dw, dh = (float(v) for v in delta)
    # decoded sides stay positive and finite
    dw = min(max(dw, -DELTA_CLIP), DELTA_CLIP)
    dh = min(max(dh, -DELTA_CLIP), DELTA_CLIP)
    sw, sh = src.width, src.height
    cx = src.x1 + 0.5 * sw + dx * sw
    cy = src.y1 + 0.5 * sh + dy * sh
    w, h = sw * math.exp(dw), sh * math.exp(dh)
    return Box(x1=cx - 0.5 * w, y1=cy - 0.5 * h, x2=cx + 0.5 * w, y2=cy + 0.5 * h)


def encode_branch(proposal: Proposal, width: int, height: int) -> np.ndarray:
    pb = proposal.predicted_box
    return np.concatenate(
        [
            np.asarray(proposal.feature, dtype=np.float64),
            np.asarray(proposal.logits, dtype=np.float64),
            np.array(
                [pb.x1 / width, pb.y1 / height, pb.x2 / width, pb.y2 / height],
                dtype=np.float64,
            ),
        ]
    )


@dataclass(frozen=True)
class FusionInput:
    base_branch: np.ndarray
    novel_branch: np.ndarray
    proposal_box: Box


@dataclass(frozen=True)
class FusionTarget:
    class_id: int
    box_delta: Optional[np.ndarray] = None


@dataclass
class FusionNetParams:
    base_dim: int
    novel_dim: int
    hidden_dim: int
    trunk_dim: int
    num_classes: int  # |B| + |N|; the class head has one more output for background
    weights: Dict[str, np.ndarray] = field(default_factory=dict)
    biases: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def num_outputs(self) -> int:
        return self.num_classes + 1

    @property
    def background_id(self) -> int:
        return self.num_classes

    def layer_dims(self) -> Dict[str, Tuple[int, int]]:
        h, t = self.hidden_dim, self.trunk_dim
        dims = {}
        for branch, d_in in (("base", self.base_dim), ("novel", self.novel_dim)):
            dims[f"{branch}_proj"] = (d_in, h)
            dims[f"{branch}_selu1"] = (h, h)
            dims[f"{branch}_selu2"] = (h, h)
        dims["relu1"] = (2 * h, t)
        dims["relu2"] = (t, t)
        dims["class_head"] = (t, self.num_outputs)
        dims["box_head"] = (t, 4)
        return dims

    def hyperparameters(self) -> Dict[str, int]:
        return {
            "base_dim": self.base_dim,
            "novel_dim": self.novel_dim,
            "hidden_dim": self.hidden_dim,
            "trunk_dim": self.trunk_dim,
            "num_classes": self.num_classes,
        }

    def check(self):
        for name, (fan_in, fan_out) in self.layer_dims().items():
            if name not in self.weights or name not in self.biases:
                raise DimensionMismatchError(name, fan_in * fan_out, 0)
            if self.weights[name].shape != (fan_in, fan_out):
                raise DimensionMismatchError(
                    name, fan_in * fan_out, int(self.weights[name].size)
                )
            if self.biases[name].shape != (fan_out,):
                raise DimensionMismatchError(name, fan_out, int(self.biases[name].size))

    def copy(self) -> "FusionNetParams":
        return FusionNetParams(
            **self.hyperparameters(),
            weights={k: v.copy() for k, v in self.weights.items()},
            biases={k: v.copy() for k, v in self.biases.items()},
        )

    def zeros_like(self) -> "FusionNetParams":
        return FusionNetParams(
            **self.hyperparameters(),
            weights={k: np.zeros_like(v) for k, v in self.weights.items()},
            biases={k: np.zeros_like(v) for k, v in self.biases.items()},
        )

    def arrays(self):
        """(name, kind, array) for every parameter array in layer order."""
        for name in LAYER_NAMES:
            yield name, "weight", self.weights[name]
            yield name, "bias", self.biases[name]

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for _, _, a in self.arrays())


def init_params(
    base_dim: int,
    novel_dim: int,
    num_classes: int,
    hidden_dim: int = 128,
    trunk_dim: int = 256,
    seed: int = 0,
) -> FusionNetParams:
    """Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    params = FusionNetParams(base_dim, novel_dim, hidden_dim, trunk_dim, num_classes)
    rng = np.random.default_rng(seed)
    for name, (fan_in, fan_out) in params.layer_dims().items():
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        params.weights[name] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        params.biases[name] = np.zeros(fan_out, dtype=np.float64)
    return params


def _affine(params: FusionNetParams, name: str, x: np.ndarray) -> np.ndarray:
    fan_in = params.weights[name].shape[0]
    if x.shape[1] != fan_in:
        raise DimensionMismatchError(name, fan_in, x.shape[1])
    return x @ params.weights[name] + params.biases[name]


def _forward_batch(params: FusionNetParams, Xb: np.ndarray, Xn: np.ndarray):
    cache = {}
    branch_out = []
    for branch, X in (("base", Xb), ("novel", Xn)):
        h0 = _affine(params, f"{branch}_proj", X)
        z1 = _affine(params, f"{branch}_selu1", h0)
        a1 = selu(z1)
        z2 = _affine(params, f"{branch}_selu2", a1)
        a2 = selu(z2)
        cache[branch] = (X, h0, z1, a1, z2)
        branch_out.append(a2)

    c = np.concatenate(branch_out, axis=1)
    zr1 = _affine(params, "relu1", c)
    t1 = np.maximum(zr1, 0.0)
    zr2 = _affine(params, "relu2", t1)
    t2 = np.maximum(zr2, 0.0)
    scores = _affine(params, "class_head", t2)
    deltas = _affine(params, "box_head", t2)
    cache["trunk"] = (c, zr1, t1, zr2, t2)
    return scores, deltas, cache


def _stack_inputs(inputs: Sequence[FusionInput]):
    Xb = np.stack([np.asarray(i.base_branch, dtype=np.float64) for i in inputs])
    Xn = np.stack([np.asarray(i.novel_branch, dtype=np.float64) for i in inputs])
    return Xb, Xn


def _stack_targets(targets: Sequence[FusionTarget], background_id: int):
    labels = np.array([t.class_id for t in targets], dtype=np.int64)
    deltas = np.zeros((len(targets), 4), dtype=np.float64)
    for k, t in enumerate(targets):
        if t.class_id != background_id:
            deltas[k] = t.box_delta
    return labels, deltas


def forward(params: FusionNetParams, input: FusionInput) -> Tuple[np.ndarray, np.ndarray]:
    Xb, Xn = _stack_inputs([input])
    scores, deltas, _ = _forward_batch(params, Xb, Xn)
    return scores[0], deltas[0]


@dataclass
class LossBreakdown:
    total: float
    classification: float
    box: float


def _loss_and_grad_arrays(
    params: FusionNetParams,
    Xb: np.ndarray,
    Xn: np.ndarray,
    labels: np.ndarray,
    target_deltas: np.ndarray,
    box_weight: float,
    need_grad: bool = True,
):
    n = Xb.shape[0]
    if n == 0:
        raise EmptyBatchError()
    scores, deltas, cache = _forward_batch(params, Xb, Xn)

    log_probs = log_softmax(scores)
    classification = float(-log_probs[np.arange(n), labels].mean())

    foreground = labels != params.background_id
    n_fg = int(foreground.sum())
    diff = deltas - target_deltas
    if n_fg:
        box = float(smooth_l1(diff[foreground]).sum(axis=1).mean())
    else:
        box = 0.0
    breakdown = LossBreakdown(classification + box_weight * box, classification, box)
    if not need_grad:
        return breakdown, None

    d_scores = np.exp(log_probs)
    d_scores[np.arange(n), labels] -= 1.0
    d_scores /= n
    d_deltas = np.zeros_like(deltas)
    if n_fg:
        d_deltas[foreground] = box_weight * smooth_l1_grad(diff[foreground]) / n_fg

    grads = params.zeros_like()
    W, gW, gb = params.weights, grads.weights, grads.biases
    c, zr1, t1, zr2, t2 = cache["trunk"]

    gW["class_head"] = t2.T @ d_scores
    gb["class_head"] = d_scores.sum(axis=0)
    gW["box_head"] = t2.T @ d_deltas
    gb["box_head"] = d_deltas.sum(axis=0)

    d_z = (d_scores @ W["class_head"].T + d_deltas @ W["box_head"].T) * (zr2 > 0)
    gW["relu2"] = t1.T @ d_z
    gb["relu2"] = d_z.sum(axis=0)
    d_z = (d_z @ W["relu2"].T) * (zr1 > 0)
    gW["relu1"] = c.T @ d_z
    gb["relu1"] = d_z.sum(axis=0)
    d_c = d_z @ W["relu1"].T

    h = params.hidden_dim
    for branch, d_a2 in (("base", d_c[:, :h]), ("novel", d_c[:, h:])):
        X, h0, z1, a1, z2 = cache[branch]
        d_z2 = d_a2 * selu_grad(z2)
        gW[f"{branch}_selu2"] = a1.T @ d_z2
        gb[f"{branch}_selu2"] = d_z2.sum(axis=0)
        d_z1 = (d_z2 @ W[f"{branch}_selu2"].T) * selu_grad(z1)
        gW[f"{branch}_selu1"] = h0.T @ d_z1
        gb[f"{branch}_selu1"] = d_z1.sum(axis=0)
        d_h0 = d_z1 @ W[f"{branch}_selu1"].T
        gW[f"{branch}_proj"] = X.T @ d_h0
        gb[f"{branch}_proj"] = d_h0.sum(axis=0)
    return breakdown, grads


def _unpack(params: FusionNetParams, batch):
    if not batch:
        raise EmptyBatchError()
    inputs, targets = zip(*batch)
    Xb, Xn = _stack_inputs(inputs)
    labels, deltas = _stack_targets(targets, params.background_id)
    return Xb, Xn, labels, deltas


def loss(
    params: FusionNetParams,
    batch: Sequence[Tuple[FusionInput, FusionTarget]],
    box_weight: float = 1.0,
) -> Tuple[float, LossBreakdown]:
    """
    Mean cross-entropy over the batch plus box_weight times the mean smooth-L1
    box error over non-background examples (0 when there are none).
    """
    breakdown, _ = _loss_and_grad_arrays(
        params, *_unpack(params, batch), box_weight, need_grad=False
    )
    return breakdown.total, breakdown


def gradients(
    params: FusionNetParams,
    batch: Sequence[Tuple[FusionInput, FusionTarget]],
    box_weight: float = 1.0,
) -> FusionNetParams:
    _, grads = _loss_and_grad_arrays(params, *_unpack(params, batch), box_weight)
    return grads


class TrainingConfig(BaseModel):
    epochs: int = 10
    lr: float = 0.001
    batch_size: int = 8
    seed: int = 0
    momentum: float = 0.9
    box_weight: float = 1.0

    @validator("epochs", "batch_size")
    def positive(cls, value):
        if value <= 0:
            raise ValueError("must be positive")
        return value

    @validator("lr", "box_weight")
    def non_negative(cls, value):
        if value < 0:
            raise ValueError("must be non-negative")
        return value

    @validator("momentum")
    def momentum_range(cls, value):
        if not 0.0 <= value < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        return value


@dataclass
class TrainingResult:
    params: FusionNetParams
    loss_trace: List[float]
    classification_trace: List[float]
    box_trace: List[float]


def train(
    initial: FusionNetParams,
    dataset: Sequence[Tuple[FusionInput, FusionTarget]],
    config: TrainingConfig = None,
    log: logging.Logger = None,
) -> TrainingResult:
    """Minibatch SGD with momentum; shuffling is seeded so runs are reproducible."""
    config = config or TrainingConfig()
    log = log or logging.getLogger("fusiondet.train")
    if not dataset:
        raise EmptyBatchError()

    params = initial.copy()
    params.check()
    velocity = params.zeros_like()
    Xb, Xn, labels, deltas = _unpack(params, dataset)
    rng = np.random.default_rng(config.seed)
    n = len(dataset)

    loss_trace, cls_trace, box_trace = [], [], []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        totals = []
        for batch_no, start in enumerate(range(0, n, config.batch_size), start=1):
            idx = order[start : start + config.batch_size]
            breakdown, grads = _loss_and_grad_arrays(
                params, Xb[idx], Xn[idx], labels[idx], deltas[idx], config.box_weight
            )
            if not math.isfinite(breakdown.total) or not grads.is_finite():
                raise TrainingDivergedError(epoch, batch_no)
            for name in LAYER_NAMES:
                for store, vel, grad in (
                    (params.weights, velocity.weights, grads.weights),
                    (params.biases, velocity.biases, grads.biases),
                ):
                    vel[name] = config.momentum * vel[name] - config.lr * grad[name]
                    store[name] = store[name] + vel[name]
            totals.append(
                (breakdown.total, breakdown.classification, breakdown.box, len(idx))
            )
            if not params.is_finite():
                raise TrainingDivergedError(epoch, batch_no)

        weights = np.array([t[3] for t in totals], dtype=np.float64)
        epoch_loss, epoch_cls, epoch_box = (
            float(np.dot([t[k] for t in totals], weights) / weights.sum())
            for k in range(3)
        )
        loss_trace.append(epoch_loss)
        cls_trace.append(epoch_cls)
        box_trace.append(epoch_box)
        log.info(
            f"epoch {epoch}/{config.epochs} loss={epoch_loss:.6f} "
            f"cls={epoch_cls:.6f} box={epoch_box:.6f}"
        )
    return TrainingResult(params, loss_trace, cls_trace, box_trace)


def classification_accuracy(
    params: FusionNetParams, dataset: Sequence[Tuple[FusionInput, FusionTarget]]
) -> float:
    if not dataset:
        return 0.0
    inputs, targets = zip(*dataset)
    scores, _, _ = _forward_batch(params, *_stack_inputs(inputs))
    predicted = scores.argmax(axis=1)
    expected = np.array([t.class_id for t in targets])
    return float((predicted == expected).mean())


def fusion_inputs(
    scene: SceneRecord, segregation: SegregationResult
) -> List[Tuple[Tuple[Source, int], FusionInput]]:
    """
    One FusionInput per overlapping proposal. The proposal's own detector record
    is paired with the opposing detector's most-overlapping proposal (highest IoU,
    lowest index on ties).
    """
    proposals = {
        Source.base: scene.base_output.proposals,
        Source.novel: scene.novel_output.proposals,
    }
    results = []
    for source, index in segregation.overlapping:
        own = proposals[source][index]
        opposing = proposals[source.other]
        if not opposing:
            continue
        overlaps = pairwise_iou([own.box], [p.box for p in opposing])[0]
        partner = opposing[int(np.argmax(overlaps))]
        base, novel = (own, partner) if source is Source.base else (partner, own)
        results.append(
            (
                (source, index),
                FusionInput(
                    base_branch=encode_branch(base, scene.width, scene.height),
                    novel_branch=encode_branch(novel, scene.width, scene.height),
                    proposal_box=own.box,
                ),
            )
        )
    return results


def assign_target(
    proposal_box: Box, scene: SceneRecord, partition: ClassPartition, match_iou: float
) -> FusionTarget:
    if scene.ground_truth:
        overlaps = pairwise_iou([proposal_box], [gt.box for gt in scene.ground_truth])[0]
        best = int(np.argmax(overlaps))
        if overlaps[best] >= match_iou:
            gt = scene.ground_truth[best]
            return FusionTarget(gt.class_id, encode_deltas(proposal_box, gt.box))
    return FusionTarget(partition.background_id)


def build_training_set(
    scenes: Sequence[SceneRecord],
    partition: ClassPartition,
    tau: float = 0.5,
    match_iou: float = 0.5,
) -> List[Tuple[FusionInput, FusionTarget]]:
    dataset = []
    for scene in scenes:
        segregation = segregate_scene(scene, tau)
        for _, fusion_input in fusion_inputs(scene, segregation):
            target = assign_target(fusion_input.proposal_box, scene, partition, match_iou)
            dataset.append((fusion_input, target))
    return dataset


def predict(
    params: FusionNetParams, inputs: Sequence[FusionInput], score_thresh: float = 0.05
) -> List[Detection]:
    if not inputs:
        return []
    scores, deltas, _ = _forward_batch(params, *_stack_inputs(inputs))
    probs = softmax(scores)
    detections = []
    for k, fusion_input in enumerate(inputs):
        class_id = int(np.argmax(probs[k]))
        score = float(probs[k, class_id])
        if class_id == params.background_id or score < score_thresh:
            continue
        detections.append(
            Detection(
                box=decode_deltas(fusion_input.proposal_box, deltas[k]),
                class_id=class_id,
                score=score,
                provenance=Provenance.fusion,
            )
        )
    return detections
