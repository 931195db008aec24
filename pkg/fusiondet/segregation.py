from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from fusiondet.exceptions import ConfigError
from fusiondet.geometry import pairwise_ioa
from fusiondet.models import Proposal, SceneRecord, Source

DEFAULT_TAU = 0.5


class SegregationResult(BaseModel):
    valid_base: List[int] = []
    valid_novel: List[int] = []
    overlapping: List[Tuple[Source, int]] = []

    def overlapping_indices(self, source: Source) -> List[int]:
        return [index for src, index in self.overlapping if src is source]

    def counts(self) -> dict:
        return {
            "valid_base": len(self.valid_base),
            "valid_novel": len(self.valid_novel),
            "overlapping": len(self.overlapping),
        }


def check_tau(tau: float):
    if not 0.0 <= tau <= 1.0:
        raise ConfigError(f"IoA threshold tau must be in [0, 1], got {tau}")


def segregate_boxes(base_boxes, novel_boxes, tau: float = DEFAULT_TAU) -> SegregationResult:
    check_tau(tau)
    base_ioa = pairwise_ioa(base_boxes, novel_boxes)
    novel_ioa = pairwise_ioa(novel_boxes, base_boxes)
    n_base, n_novel = base_ioa.shape[0], novel_ioa.shape[0]

    # a proposal stays valid only if its IoA with every opposing proposal is below tau
    if n_novel:
        base_valid = base_ioa.max(axis=1) < tau
    else:
        base_valid = np.ones(n_base, dtype=bool)
    if n_base:
        novel_valid = novel_ioa.max(axis=1) < tau
    else:
        novel_valid = np.ones(n_novel, dtype=bool)

    return SegregationResult(
        valid_base=[i for i in range(n_base) if base_valid[i]],
        valid_novel=[j for j in range(n_novel) if novel_valid[j]],
        overlapping=[(Source.base, i) for i in range(n_base) if not base_valid[i]]
        + [(Source.novel, j) for j in range(n_novel) if not novel_valid[j]],
    )


def segregate(
    P_B: Sequence[Proposal], P_N: Sequence[Proposal], tau: float = DEFAULT_TAU
) -> SegregationResult:
    return segregate_boxes([p.box for p in P_B], [p.box for p in P_N], tau)


def segregate_scene(scene: SceneRecord, tau: float = DEFAULT_TAU) -> SegregationResult:
    return segregate(scene.base_output.proposals, scene.novel_output.proposals, tau)
