"""Axis-aligned box arithmetic: IoU, centerness, and anchor delta coding.

Boxes are stored in corner form (x_min, y_min, x_max, y_max) in scene
coordinates. Deltas follow the usual anchor-relative parameterization:
offsets normalized by anchor size, log size ratios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in corner form.

    Coordinates must be finite and ordered (x_min <= x_max, y_min <= y_max).
    Zero-area boxes are legal; inverted ones are not.
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"box coordinates must be finite, got {coords}")
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise ValueError(f"box corners out of order: {coords}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    @classmethod
    def from_center(cls, cx: float, cy: float, width: float, height: float) -> Box:
        """Build a box from center form; width/height must be nonnegative."""
        if width < 0 or height < 0:
            raise ValueError(f"negative box size: {(width, height)}")
        return cls(cx - 0.5 * width, cy - 0.5 * height, cx + 0.5 * width, cy + 0.5 * height)

    def to_center(self) -> tuple[float, float, float, float]:
        """Return (cx, cy, width, height)."""
        cx, cy = self.center
        return (cx, cy, self.width, self.height)

    def as_array(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max], dtype=np.float64)

    def clip(self, extent: tuple[float, float]) -> Box:
        """Clip to the scene rectangle [0, w] x [0, h]."""
        w, h = extent
        return Box(
            min(max(self.x_min, 0.0), w),
            min(max(self.y_min, 0.0), h),
            min(max(self.x_max, 0.0), w),
            min(max(self.y_max, 0.0), h),
        )


@dataclass(frozen=True)
class BoxDeltas:
    """Anchor-relative box parameterization (dx, dy, dw, dh)."""

    dx: float
    dy: float
    dw: float
    dh: float

    def __post_init__(self) -> None:
        vals = (self.dx, self.dy, self.dw, self.dh)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"deltas must be finite, got {vals}")

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dw, self.dh], dtype=np.float64)


def iou(a: Box, b: Box) -> float:
    """Intersection-over-union of two boxes.

    Degenerate (zero-area) inputs yield 0 rather than NaN.
    """
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU matrix between two corner-form box arrays.

    Args:
        a: (N, 4) array.
        b: (M, 4) array.

    Returns:
        (N, M) array; rows/columns for degenerate boxes are 0.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    iy = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0.0)
    return out


def centerness(px: float, py: float, gt: Box) -> float:
    """Centerness of a point inside a box: sqrt of the product of the
    min/max ratios of the left/right and top/bottom distances.

    Returns 1 at the box center, decays toward the border, and is 0 for
    points on or outside the border.
    """
    if gt.area <= 0.0:
        raise ValueError(f"centerness requires a positive-area box, got {gt}")
    left = px - gt.x_min
    right = gt.x_max - px
    top = py - gt.y_min
    bottom = gt.y_max - py
    if min(left, right, top, bottom) <= 0.0:
        return 0.0
    return math.sqrt((min(left, right) / max(left, right)) * (min(top, bottom) / max(top, bottom)))


def centerness_array(px: np.ndarray, py: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """Vectorized centerness of points (px[i], py[i]) in boxes[i]; 0 outside."""
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    left = px - boxes[:, 0]
    right = boxes[:, 2] - px
    top = py - boxes[:, 1]
    bottom = boxes[:, 3] - py
    inside = (left > 0) & (right > 0) & (top > 0) & (bottom > 0)
    lr = np.minimum(left, right) / np.maximum(np.maximum(left, right), 1e-12)
    tb = np.minimum(top, bottom) / np.maximum(np.maximum(top, bottom), 1e-12)
    return np.where(inside, np.sqrt(np.clip(lr * tb, 0.0, None)), 0.0)


def encode_deltas(anchor: Box, target: Box) -> BoxDeltas:
    """Express a target box relative to an anchor.

    dx, dy are center offsets in units of anchor width/height; dw, dh are
    log size ratios. The anchor and target must both have positive area.
    """
    aw, ah = anchor.width, anchor.height
    if aw <= 0.0 or ah <= 0.0:
        raise ValueError(f"anchor must have positive width/height, got {anchor}")
    tw, th = target.width, target.height
    if tw <= 0.0 or th <= 0.0:
        raise ValueError(f"target must have positive width/height, got {target}")
    acx, acy = anchor.center
    tcx, tcy = target.center
    return BoxDeltas(
        (tcx - acx) / aw,
        (tcy - acy) / ah,
        math.log(tw / aw),
        math.log(th / ah),
    )


def decode_deltas(anchor: Box, deltas: BoxDeltas) -> Box:
    """Invert :func:`encode_deltas`; decoded boxes always have positive area."""
    aw, ah = anchor.width, anchor.height
    if aw <= 0.0 or ah <= 0.0:
        raise ValueError(f"anchor must have positive width/height, got {anchor}")
    acx, acy = anchor.center
    cx = acx + deltas.dx * aw
    cy = acy + deltas.dy * ah
    w = aw * math.exp(deltas.dw)
    h = ah * math.exp(deltas.dh)
    return Box.from_center(cx, cy, w, h)


def encode_deltas_array(anchors: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Row-wise :func:`encode_deltas` on (N, 4) corner-form arrays."""
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 4)
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    if np.any(aw <= 0) or np.any(ah <= 0):
        raise ValueError("anchors must have positive width/height")
    tw = targets[:, 2] - targets[:, 0]
    th = targets[:, 3] - targets[:, 1]
    if np.any(tw <= 0) or np.any(th <= 0):
        raise ValueError("targets must have positive width/height")
    acx = 0.5 * (anchors[:, 0] + anchors[:, 2])
    acy = 0.5 * (anchors[:, 1] + anchors[:, 3])
    tcx = 0.5 * (targets[:, 0] + targets[:, 2])
    tcy = 0.5 * (targets[:, 1] + targets[:, 3])
    return np.stack(
        [(tcx - acx) / aw, (tcy - acy) / ah, np.log(tw / aw), np.log(th / ah)], axis=1
    )


def decode_deltas_array(anchors: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Row-wise :func:`decode_deltas` on (N, 4) arrays."""
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    deltas = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    if np.any(aw <= 0) or np.any(ah <= 0):
        raise ValueError("anchors must have positive width/height")
    acx = 0.5 * (anchors[:, 0] + anchors[:, 2])
    acy = 0.5 * (anchors[:, 1] + anchors[:, 3])
    cx = acx + deltas[:, 0] * aw
    cy = acy + deltas[:, 1] * ah
    w = aw * np.exp(deltas[:, 2])
    h = ah * np.exp(deltas[:, 3])
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)


def clip_boxes_array(boxes: np.ndarray, extent: tuple[float, float]) -> np.ndarray:
    """Clip (N, 4) corner-form boxes to [0, w] x [0, h]."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    w, h = extent
    out = boxes.copy()
    out[:, 0::2] = np.clip(out[:, 0::2], 0.0, w)
    out[:, 1::2] = np.clip(out[:, 1::2], 0.0, h)
    return out
