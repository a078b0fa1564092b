"""Anchor grids and per-anchor training target assignment.

One square anchor per grid cell. Assignment produces, per anchor: a
classification label (positive / negative / ignore), an optional
localization-quality target, the matched label index, and the matched
label's confidence (1 for ground truth, the pseudo-score for pseudo-labels).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from hybridprop.geometry import Box, centerness_array, pairwise_iou

CLS_POSITIVE = 1
CLS_NEGATIVE = 0
CLS_IGNORE = -1

QUALITY_KINDS = ("centerness", "iou")


@dataclass(frozen=True)
class MatchPolicy:
    """Thresholds governing anchor-to-label assignment.

    ``quality`` selects the localization-quality definition: ``centerness``
    admits anchors whose center lies strictly inside the matched label,
    ``iou`` admits anchors whose IoU with the matched label reaches
    ``lq_iou``.
    """

    pos_iou: float = 0.7
    neg_iou: float = 0.3
    lq_iou: float = 0.3
    quality: str = "centerness"

    def __post_init__(self) -> None:
        if not 0.0 <= self.neg_iou <= self.pos_iou <= 1.0:
            raise ValueError(
                f"need 0 <= neg_iou <= pos_iou <= 1, got {self.neg_iou}, {self.pos_iou}"
            )
        if not 0.0 <= self.lq_iou <= 1.0:
            raise ValueError(f"lq_iou must be in [0, 1], got {self.lq_iou}")
        if self.quality not in QUALITY_KINDS:
            raise ValueError(f"quality must be one of {QUALITY_KINDS}, got {self.quality!r}")


@dataclass
class AnchorGrid:
    """Square anchors centered on a regular grid, row-major (y outer, x inner)."""

    boxes: np.ndarray
    stride: float
    anchor_size: float
    scene_extent: tuple[float, float]
    shape: tuple[int, int]

    def __len__(self) -> int:
        return self.boxes.shape[0]

    def anchor(self, i: int) -> Box:
        x0, y0, x1, y1 = self.boxes[i]
        return Box(float(x0), float(y0), float(x1), float(y1))

    @property
    def centers(self) -> np.ndarray:
        """(A, 2) array of anchor centers."""
        return 0.5 * (self.boxes[:, :2] + self.boxes[:, 2:])


def generate_anchors(
    scene_extent: tuple[float, float], stride: float, anchor_size: float
) -> AnchorGrid:
    """Lay one square anchor per stride cell over the scene.

    The grid has ceil(extent / stride) cells per axis so the scene border is
    always covered; anchors sit at cell centers and may overhang the scene.
    """
    w, h = scene_extent
    if w <= 0 or h <= 0:
        raise ValueError(f"scene extent must be positive, got {scene_extent}")
    if stride <= 0 or anchor_size <= 0:
        raise ValueError(f"stride and anchor_size must be positive, got {stride}, {anchor_size}")
    cols = math.ceil(w / stride)
    rows = math.ceil(h / stride)
    xs = (np.arange(cols) + 0.5) * stride
    ys = (np.arange(rows) + 0.5) * stride
    cx, cy = np.meshgrid(xs, ys)
    cx = cx.reshape(-1)
    cy = cy.reshape(-1)
    half = 0.5 * anchor_size
    boxes = np.stack([cx - half, cy - half, cx + half, cy + half], axis=1)
    return AnchorGrid(boxes, float(stride), float(anchor_size), (float(w), float(h)), (rows, cols))


@dataclass(frozen=True)
class AnchorAssignment:
    """Assignment record for a single anchor."""

    cls_label: int
    lq_target: Optional[float]
    matched_gt: Optional[int]
    target_score: float


@dataclass
class AnchorAssignments:
    """Vectorized assignment over a full grid.

    ``cls_labels`` holds CLS_POSITIVE / CLS_NEGATIVE / CLS_IGNORE;
    ``lq_targets`` is NaN where the anchor is not a quality positive;
    ``matched_gt`` is -1 where no label matched.
    """

    cls_labels: np.ndarray
    lq_targets: np.ndarray
    matched_gt: np.ndarray
    target_scores: np.ndarray

    def __len__(self) -> int:
        return self.cls_labels.shape[0]

    def __getitem__(self, i: int) -> AnchorAssignment:
        matched = int(self.matched_gt[i])
        lq = self.lq_targets[i]
        return AnchorAssignment(
            cls_label=int(self.cls_labels[i]),
            lq_target=None if np.isnan(lq) else float(lq),
            matched_gt=None if matched < 0 else matched,
            target_score=float(self.target_scores[i]),
        )

    @property
    def positive_indices(self) -> np.ndarray:
        return np.flatnonzero(self.cls_labels == CLS_POSITIVE)

    @property
    def negative_indices(self) -> np.ndarray:
        return np.flatnonzero(self.cls_labels == CLS_NEGATIVE)

    @property
    def lq_indices(self) -> np.ndarray:
        return np.flatnonzero(~np.isnan(self.lq_targets))


def assign(
    grid: AnchorGrid, label_boxes: Sequence[Box], policy: MatchPolicy,
    label_scores: Optional[Sequence[float]] = None,
) -> AnchorAssignments:
    """Match anchors to labels under the policy thresholds.

    Classification: IoU >= pos_iou is positive, IoU < neg_iou negative, the
    band between is ignored. Each label additionally forces its highest-IoU
    anchor positive (only when that IoU is nonzero; degenerate labels force
    nothing), overriding that anchor's match to the forcing label. Quality
    membership and targets are computed against the final matched label.

    Args:
        grid: anchor grid.
        label_boxes: label boxes in scene coordinates.
        policy: thresholds and quality kind.
        label_scores: per-label confidence, 1.0 when omitted.

    Returns:
        Per-anchor assignment arrays.
    """
    n = len(grid)
    num_labels = len(label_boxes)
    if label_scores is None:
        label_scores = [1.0] * num_labels
    if len(label_scores) != num_labels:
        raise ValueError(
            f"label_scores length {len(label_scores)} != label count {num_labels}"
        )
    cls_labels = np.full(n, CLS_NEGATIVE, dtype=np.int8)
    lq_targets = np.full(n, np.nan, dtype=np.float64)
    matched = np.full(n, -1, dtype=np.int64)
    scores = np.ones(n, dtype=np.float64)
    if num_labels == 0:
        return AnchorAssignments(cls_labels, lq_targets, matched, scores)

    boxes_arr = np.stack([b.as_array() for b in label_boxes])
    ious = pairwise_iou(grid.boxes, boxes_arr)
    max_iou = ious.max(axis=1)
    argmax_label = ious.argmax(axis=1)
    matched = np.where(max_iou > 0.0, argmax_label, -1)

    cls_labels = np.full(n, CLS_IGNORE, dtype=np.int8)
    cls_labels[max_iou < policy.neg_iou] = CLS_NEGATIVE
    cls_labels[max_iou >= policy.pos_iou] = CLS_POSITIVE

    # Every label claims its best-overlapping anchor; zero overlap claims
    # nothing. Later labels win contested anchors.
    for j in range(num_labels):
        best = int(ious[:, j].argmax())
        if ious[best, j] > 0.0:
            cls_labels[best] = CLS_POSITIVE
            matched[best] = j

    has_match = matched >= 0
    idx = np.flatnonzero(has_match)
    if idx.size:
        matched_boxes = boxes_arr[matched[idx]]
        if policy.quality == "centerness":
            centers = grid.centers[idx]
            q = centerness_array(centers[:, 0], centers[:, 1], matched_boxes)
            member = q > 0.0
        else:
            q = ious[idx, matched[idx]]
            member = q >= policy.lq_iou
        lq_targets[idx[member]] = q[member]
        scores_arr = np.asarray(label_scores, dtype=np.float64)
        scores[idx] = scores_arr[matched[idx]]
    return AnchorAssignments(cls_labels, lq_targets, matched, scores)


def sample_cls(
    assignments: AnchorAssignments,
    batch_size: int,
    pos_fraction: float,
    rng: np.random.Generator | int,
) -> np.ndarray:
    """Sample classification training indices, positives first.

    Positives are capped at round(pos_fraction * batch_size); the remainder
    is filled with negatives (all of them if fewer than requested). The rng
    only permutes which anchors are drawn, never their assignment labels.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if not 0.0 <= pos_fraction <= 1.0:
        raise ValueError(f"pos_fraction must be in [0, 1], got {pos_fraction}")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    pos = assignments.positive_indices
    neg = assignments.negative_indices
    pos_cap = int(math.floor(pos_fraction * batch_size + 0.5))
    n_pos = min(pos.size, pos_cap)
    take_pos = rng.permutation(pos)[:n_pos] if pos.size else pos
    n_neg = min(neg.size, batch_size - n_pos)
    take_neg = rng.permutation(neg)[:n_neg] if neg.size else neg
    return np.concatenate([np.sort(take_pos), np.sort(take_neg)]).astype(np.int64)
