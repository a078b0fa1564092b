"""Proposal scoring: blending classification and localization-quality
scores into a single objectness, plus NMS and top-k selection.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from hybridprop.geometry import Box, pairwise_iou


@dataclass(frozen=True)
class ScoredProposal:
    """A box with its two head scores and the blended objectness.

    All three scores live in [0, 1]; ``objectness`` is the blend actually
    used for ranking, NMS, and pseudo-label selection.
    """

    box: Box
    cls_score: float
    lq_score: float
    objectness: float

    def __post_init__(self) -> None:
        for name in ("cls_score", "lq_score", "objectness"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")

    def with_objectness(self, value: float) -> ScoredProposal:
        return replace(self, objectness=value)


def blend_objectness(cls_score: float, lq_score: float, lambda_cls: float) -> float:
    """Convex blend of the two head scores.

    ``lambda_cls * cls_score + (1 - lambda_cls) * lq_score``; the endpoints
    reproduce each head exactly. The blend weight at inference time need not
    match the one used in training.
    """
    for name, v in (("cls_score", cls_score), ("lq_score", lq_score), ("lambda_cls", lambda_cls)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {v}")
    return lambda_cls * cls_score + (1.0 - lambda_cls) * lq_score


def rescore(proposals: Sequence[ScoredProposal], lambda_cls: float) -> list[ScoredProposal]:
    """Recompute every proposal's objectness under a new blend weight."""
    return [
        p.with_objectness(blend_objectness(p.cls_score, p.lq_score, lambda_cls))
        for p in proposals
    ]


def _sorted_order(proposals: Sequence[ScoredProposal]) -> np.ndarray:
    scores = np.array([p.objectness for p in proposals], dtype=np.float64)
    # kind="stable" keeps input order among equal scores.
    return np.argsort(-scores, kind="stable")


def nms(proposals: Sequence[ScoredProposal], iou_threshold: float = 0.7) -> list[ScoredProposal]:
    """Greedy non-maximum suppression by descending objectness.

    A proposal is suppressed when its IoU with an already kept proposal
    exceeds the threshold (strictly). Ties in objectness are broken by input
    order, so the result is deterministic; the kept list preserves descending
    objectness. Zero-area proposals have IoU 0 with everything and survive.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in [0, 1], got {iou_threshold}")
    if not proposals:
        return []
    order = _sorted_order(proposals)
    boxes = np.stack([proposals[i].box.as_array() for i in order])
    ious = pairwise_iou(boxes, boxes)
    n = len(order)
    suppressed = np.zeros(n, dtype=bool)
    keep: list[int] = []
    for rank in range(n):
        if suppressed[rank]:
            continue
        keep.append(rank)
        suppressed |= ious[rank] > iou_threshold
    return [proposals[order[rank]] for rank in keep]


def top_k(proposals: Sequence[ScoredProposal], k: int) -> list[ScoredProposal]:
    """The k highest-objectness proposals in descending order.

    Ties are broken by input order; asking for more than available returns
    everything.
    """
    if k < 0:
        raise ValueError(f"k must be nonnegative, got {k}")
    order = _sorted_order(proposals)
    return [proposals[i] for i in order[:k]]
