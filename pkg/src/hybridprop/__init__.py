"""Region proposal toolkit with a tunable classification/localization-quality
objectness blend and pseudo-label self-training.

The package is organized around a small numpy pipeline: synthetic scenes with
per-anchor features (:mod:`hybridprop.dataset`), anchor grids and target
assignment (:mod:`hybridprop.anchors`), the blended training loss
(:mod:`hybridprop.losses`), a hand-rolled two-layer proposal head
(:mod:`hybridprop.model`), score blending and NMS (:mod:`hybridprop.scoring`),
self-training rounds (:mod:`hybridprop.selftrain`), class-agnostic average
recall (:mod:`hybridprop.evaluation`), and a CLI (:mod:`hybridprop.cli`).
"""

from hybridprop.geometry import Box, BoxDeltas, centerness, decode_deltas, encode_deltas, iou
from hybridprop.scoring import ScoredProposal, blend_objectness, nms, top_k

__all__ = [
    "Box",
    "BoxDeltas",
    "ScoredProposal",
    "blend_objectness",
    "centerness",
    "decode_deltas",
    "encode_deltas",
    "iou",
    "nms",
    "top_k",
]

__version__ = "0.1.0"
