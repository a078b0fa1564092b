"""Class-agnostic average recall over proposal budgets.

AR@k: for each IoU threshold, greedily match score-ordered proposals to
ground truth (each proposal takes the highest-IoU unmatched box if that IoU
clears the threshold), count matches dataset-wide, and average the recall
over the threshold sweep 0.5:0.05:0.95. The recall-vs-budget curve is
summarized by a trapezoidal AUC over log10(k), normalized so a constant
curve integrates to that constant.

Subsets (in-distribution, out-of-distribution, all) restrict the ground
truth only; predictions are shared. A subset with no ground truth anywhere
is reported as absent rather than zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from hybridprop.dataset import Dataset
from hybridprop.geometry import pairwise_iou
from hybridprop.scoring import ScoredProposal, top_k

K_SCHEDULE = (10, 30, 50, 100, 300, 500, 1000)

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))

SUBSETS = ("id", "ood", "all")


def greedy_match_ranks(iou_matrix: np.ndarray, threshold: float) -> np.ndarray:
    """Greedy matching for one scene at one threshold.

    Rows are proposals in rank order; each takes the highest-IoU unmatched
    column (ties to the lowest index) when that IoU reaches the threshold.
    Returns the row index at which each match happened. Because proposals
    are processed in rank order, the matches made by the first k rows are
    exactly the matches of evaluating at budget k.
    """
    n_pred, n_gt = iou_matrix.shape
    if n_pred == 0 or n_gt == 0:
        return np.zeros(0, dtype=np.int64)
    m = iou_matrix.copy()
    ranks = []
    for r in range(n_pred):
        j = int(m[r].argmax())
        if m[r, j] >= threshold:
            ranks.append(r)
            if len(ranks) == n_gt:
                break
            m[:, j] = -1.0
    return np.asarray(ranks, dtype=np.int64)


def greedy_match_count(iou_matrix: np.ndarray, threshold: float) -> int:
    """Number of greedy matches; see :func:`greedy_match_ranks`."""
    return int(greedy_match_ranks(iou_matrix, threshold).size)


def match_recall(
    predictions: Mapping[int, Sequence[ScoredProposal]],
    ground_truth: Mapping[int, np.ndarray],
    k: int,
    thresholds: Sequence[float] = IOU_THRESHOLDS,
) -> Optional[float]:
    """AR@k over the dataset, or None when there is no ground truth.

    ``ground_truth`` maps scene id to an (N, 4) corner-form array. Scenes
    missing from ``predictions`` simply contribute misses.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not thresholds or not all(0.0 < t < 1.0 for t in thresholds):
        raise ValueError(f"thresholds must be nonempty and inside (0, 1), got {thresholds}")
    curve = ar_curve(predictions, ground_truth, (k,), thresholds)
    return None if curve is None else curve[k]


def ar_curve(
    predictions: Mapping[int, Sequence[ScoredProposal]],
    ground_truth: Mapping[int, np.ndarray],
    ks: Sequence[int],
    thresholds: Sequence[float] = IOU_THRESHOLDS,
) -> Optional[dict[int, float]]:
    """AR at several budgets in one matching pass per scene and threshold.

    Equivalent to calling :func:`match_recall` per budget: greedy matching
    processes proposals in rank order, so the matches at budget k are the
    matches made by the first k proposals.
    """
    if not ks or any(k < 1 for k in ks):
        raise ValueError(f"budgets must be >= 1, got {ks}")
    if not thresholds or not all(0.0 < t < 1.0 for t in thresholds):
        raise ValueError(f"thresholds must be nonempty and inside (0, 1), got {thresholds}")
    total_gt = sum(int(np.asarray(g).reshape(-1, 4).shape[0]) for g in ground_truth.values())
    if total_gt == 0:
        return None
    max_k = max(ks)
    matched = np.zeros((len(thresholds), len(ks)), dtype=np.int64)
    for scene_id, gt in ground_truth.items():
        gt = np.asarray(gt, dtype=np.float64).reshape(-1, 4)
        if gt.shape[0] == 0:
            continue
        preds = top_k(list(predictions.get(scene_id, ())), max_k)
        if not preds:
            continue
        boxes = np.stack([p.box.as_array() for p in preds])
        ious = pairwise_iou(boxes, gt)
        for ti, tau in enumerate(thresholds):
            ranks = greedy_match_ranks(ious, tau)
            for ki, k in enumerate(ks):
                matched[ti, ki] += int((ranks < k).sum())
    per_threshold = matched / total_gt
    return {k: float(per_threshold[:, ki].mean()) for ki, k in enumerate(ks)}


def subset_ground_truth(
    dataset: Dataset, subset: str, id_class_ids: Sequence[int]
) -> dict[int, np.ndarray]:
    """Ground-truth boxes per scene restricted to a subset; pseudo-labels
    never count as ground truth.
    """
    if subset not in SUBSETS:
        raise ValueError(f"subset must be one of {SUBSETS}, got {subset!r}")
    id_set = set(id_class_ids)
    out: dict[int, np.ndarray] = {}
    for s in dataset.scenes:
        rows = []
        for lb in s.labels + s.withheld:
            if lb.is_pseudo:
                continue
            is_id = lb.class_id in id_set
            if subset == "id" and not is_id:
                continue
            if subset == "ood" and is_id:
                continue
            rows.append(lb.box.as_array())
        out[s.scene_id] = np.stack(rows) if rows else np.zeros((0, 4))
    return out


def ar_auc(curve: Mapping[int, float], ks: Sequence[int] = K_SCHEDULE) -> float:
    """Trapezoidal area under AR vs log10(k), normalized by the log span.

    Every budget in ``ks`` must be present; a constant curve integrates to
    its constant.
    """
    missing = [k for k in ks if k not in curve]
    if missing:
        raise ValueError(f"AR curve is missing budgets {missing}")
    if len(ks) < 2:
        raise ValueError("need at least two budgets for an AUC")
    x = np.log10(np.asarray(sorted(ks), dtype=np.float64))
    y = np.asarray([curve[k] for k in sorted(ks)], dtype=np.float64)
    return float(np.trapezoid(y, x) / (x[-1] - x[0]))


@dataclass
class SubsetMetrics:
    ar: dict[int, float]
    auc: float
    num_gt: int
    num_scenes: int


@dataclass
class EvalReport:
    """AR curves per subset plus the evaluation configuration.

    JSON layout: one top-level key per present subset mapping to its
    metrics, plus ``config``; absent subsets are omitted entirely.
    """

    subsets: dict[str, SubsetMetrics]
    config: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        doc: dict = {}
        for name, m in self.subsets.items():
            doc[name] = {
                "ar": {str(k): v for k, v in sorted(m.ar.items())},
                "auc": m.auc,
                "num_gt": m.num_gt,
                "num_scenes": m.num_scenes,
            }
        doc["config"] = self.config
        return doc

    def save(self, path: str | Path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, sort_keys=True, indent=2)
            f.write("\n")

    @classmethod
    def from_json_dict(cls, raw: Mapping) -> EvalReport:
        subsets = {}
        for name in SUBSETS:
            if name not in raw:
                continue
            block = raw[name]
            subsets[name] = SubsetMetrics(
                ar={int(k): float(v) for k, v in block["ar"].items()},
                auc=float(block["auc"]),
                num_gt=int(block.get("num_gt", 0)),
                num_scenes=int(block.get("num_scenes", 0)),
            )
        return cls(subsets=subsets, config=dict(raw.get("config", {})))

    @classmethod
    def load(cls, path: str | Path) -> EvalReport:
        with open(path) as f:
            return cls.from_json_dict(json.load(f))


def evaluate(
    predictions: Mapping[int, Sequence[ScoredProposal]],
    dataset: Dataset,
    id_class_ids: Sequence[int],
    ks: Sequence[int] = K_SCHEDULE,
    thresholds: Sequence[float] = IOU_THRESHOLDS,
    config: Optional[dict] = None,
) -> EvalReport:
    """Full AR report over the three subsets with shared predictions."""
    report = EvalReport(subsets={}, config=dict(config or {}))
    for subset in SUBSETS:
        gt = subset_ground_truth(dataset, subset, id_class_ids)
        num_gt = sum(g.shape[0] for g in gt.values())
        if num_gt == 0:
            continue
        curve = ar_curve(predictions, gt, tuple(ks), thresholds)
        assert curve is not None
        report.subsets[subset] = SubsetMetrics(
            ar=curve,
            auc=ar_auc(curve, ks),
            num_gt=num_gt,
            num_scenes=sum(1 for g in gt.values() if g.shape[0] > 0),
        )
    return report
