"""Self-training rounds: predict on the training scenes, harvest confident
novel boxes as pseudo-labels, and fine-tune the same model on the enlarged
label set.

Each round regenerates the pseudo-label set from scratch: predictions
overlapping any ground-truth box too much are discarded, the survivors are
pooled dataset-wide and taken greedily by descending objectness (skipping
candidates that overlap an already kept pseudo-label in the same scene),
and the budget is a fixed percentage of the original label count. The
model is then fine-tuned in place at a reduced learning rate; nothing is
reinitialized between rounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from hybridprop.dataset import PSEUDO_CLASS_ID, Dataset, LabeledBox, Scene
from hybridprop.evaluation import EvalReport, evaluate
from hybridprop.geometry import Box, pairwise_iou
from hybridprop.model import (
    NonFiniteLossError,
    ProposalModel,
    SceneBatch,
    TrainConfig,
    fit,
    predict,
    prepare_scene,
)
from hybridprop.scoring import ScoredProposal


@dataclass(frozen=True)
class PseudoLabel:
    """A harvested proposal promoted to a training label."""

    box: Box
    score: float
    round_created: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        if self.round_created < 1:
            raise ValueError(f"round_created must be >= 1, got {self.round_created}")


@dataclass(frozen=True)
class SelfTrainConfig:
    """Round structure and pseudo-label harvesting knobs.

    ``finetune_epochs`` defaults to a quarter of the initial epochs;
    ``finetune_lr_scale`` shrinks the learning rate for every fine-tuning
    round. ``p_percent`` sizes the pseudo-label budget relative to the
    original (round-0) label count, rounded half up.
    """

    rounds: int = 3
    epochs: int = 16
    finetune_epochs: Optional[int] = None
    finetune_lr_scale: float = 0.1
    p_percent: float = 30.0
    overlap_iou: float = 0.7
    nms_iou: float = 0.7
    max_proposals: int = 300

    def __post_init__(self) -> None:
        if self.rounds < 0:
            raise ValueError(f"rounds must be >= 0, got {self.rounds}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.finetune_epochs is not None and self.finetune_epochs < 1:
            raise ValueError(f"finetune_epochs must be >= 1, got {self.finetune_epochs}")
        if not 0.0 < self.finetune_lr_scale <= 1.0:
            raise ValueError(f"finetune_lr_scale must be in (0, 1], got {self.finetune_lr_scale}")
        if not 0.0 <= self.p_percent <= 100.0:
            raise ValueError(f"p_percent must be in [0, 100], got {self.p_percent}")
        if not 0.0 <= self.overlap_iou <= 1.0:
            raise ValueError(f"overlap_iou must be in [0, 1], got {self.overlap_iou}")
        if not 0.0 <= self.nms_iou <= 1.0:
            raise ValueError(f"nms_iou must be in [0, 1], got {self.nms_iou}")
        if self.max_proposals < 1:
            raise ValueError(f"max_proposals must be >= 1, got {self.max_proposals}")

    def resolved_finetune_epochs(self) -> int:
        if self.finetune_epochs is not None:
            return self.finetune_epochs
        return max(1, self.epochs // 4)

    def total_epochs(self) -> int:
        return self.epochs + self.rounds * self.resolved_finetune_epochs()


class SelfTrainingDiverged(RuntimeError):
    """Raised when a round hits a non-finite loss; carries the last model
    state that completed a round cleanly.
    """

    def __init__(self, round_index: int, cause: NonFiniteLossError,
                 last_good_model: ProposalModel):
        super().__init__(
            f"training diverged in round {round_index} on scene {cause.scene_id}"
        )
        self.round_index = round_index
        self.scene_id = cause.scene_id
        self.last_good_model = last_good_model


def pseudo_budget(p_percent: float, total_original: int) -> int:
    """Round-half-up percentage of the original instance count."""
    if total_original < 0:
        raise ValueError(f"total_original must be >= 0, got {total_original}")
    return int(math.floor(p_percent / 100.0 * total_original + 0.5))


def filter_and_merge(
    predictions: Mapping[int, Sequence[ScoredProposal]],
    ground_truth: Mapping[int, Sequence[LabeledBox]],
    cfg: SelfTrainConfig,
    round_index: int = 1,
) -> dict[int, list[PseudoLabel]]:
    """Harvest pseudo-labels from one round of predictions.

    Predictions with IoU above ``cfg.overlap_iou`` to any ground-truth box
    in their scene are discarded (the model already knows those objects).
    Survivors compete dataset-wide by objectness; a candidate is kept only
    if it also stays below the same overlap with every pseudo-label already
    kept in its scene. Selection stops at the budget.
    """
    total_original = sum(
        sum(1 for lb in labels if not lb.is_pseudo) for labels in ground_truth.values()
    )
    budget = pseudo_budget(cfg.p_percent, total_original)
    out: dict[int, list[PseudoLabel]] = {sid: [] for sid in predictions}
    if budget == 0:
        return out

    pool: list[tuple[float, int, int, ScoredProposal]] = []
    for order, (sid, preds) in enumerate(predictions.items()):
        gt_boxes = [lb.box for lb in ground_truth.get(sid, ()) if not lb.is_pseudo]
        gt_arr = np.stack([b.as_array() for b in gt_boxes]) if gt_boxes else None
        if preds and gt_arr is not None:
            pred_arr = np.stack([p.box.as_array() for p in preds])
            max_iou = pairwise_iou(pred_arr, gt_arr).max(axis=1)
        else:
            max_iou = np.zeros(len(preds))
        for i, p in enumerate(preds):
            if max_iou[i] > cfg.overlap_iou:
                continue
            pool.append((p.objectness, order, i, p))
    # Descending score; scene order and within-scene rank break ties.
    pool.sort(key=lambda t: (-t[0], t[1], t[2]))

    scene_ids = list(predictions.keys())
    kept_boxes: dict[int, list[np.ndarray]] = {sid: [] for sid in scene_ids}
    kept = 0
    for score, order, _, p in pool:
        if kept >= budget:
            break
        sid = scene_ids[order]
        arr = p.box.as_array()
        if kept_boxes[sid]:
            overlap = pairwise_iou(arr[None, :], np.stack(kept_boxes[sid])).max()
            if overlap > cfg.overlap_iou:
                continue
        kept_boxes[sid].append(arr)
        out[sid].append(PseudoLabel(box=p.box, score=score, round_created=round_index))
        kept += 1
    return out


@dataclass
class RoundAudit:
    """What the model trained on in one round."""

    round_index: int
    labels: dict[int, list[LabeledBox]]
    pseudo_count: int
    epochs: int
    learning_rate: float


@dataclass
class SelfTrainResult:
    model: ProposalModel
    audits: list[RoundAudit]
    reports: list[Optional[EvalReport]]
    total_epochs: int


def _merge_labels(
    original: Mapping[int, Sequence[LabeledBox]],
    pseudo: Mapping[int, Sequence[PseudoLabel]],
) -> dict[int, list[LabeledBox]]:
    merged: dict[int, list[LabeledBox]] = {}
    for sid, labels in original.items():
        extra = [
            LabeledBox(pl.box, PSEUDO_CLASS_ID, is_pseudo=True, pseudo_score=pl.score)
            for pl in pseudo.get(sid, ())
        ]
        merged[sid] = list(labels) + extra
    return merged


def run_self_training(
    dataset: Dataset,
    model: ProposalModel,
    train_cfg: TrainConfig,
    st_cfg: SelfTrainConfig,
    seed: int,
    val_dataset: Optional[Dataset] = None,
    id_class_ids: Optional[Sequence[int]] = None,
) -> SelfTrainResult:
    """Initial training plus ``st_cfg.rounds`` pseudo-label rounds.

    The dataset must already be restricted to its training labels (split
    applied); pseudo-labels are ranked with the training blend weight. When
    a validation dataset and ID classes are given, an AR report is produced
    after the initial phase and after every round.
    """
    meta = dataset.feature_meta
    if meta is None:
        raise ValueError("dataset has no feature metadata")
    rng = np.random.default_rng(seed)
    original: dict[int, list[LabeledBox]] = {
        s.scene_id: [lb for lb in s.labels] for s in dataset.scenes
    }
    scenes_by_id = {s.scene_id: s for s in dataset.scenes}

    def batches_for(labels: Mapping[int, Sequence[LabeledBox]]) -> list[SceneBatch]:
        out = []
        for sid, lbs in labels.items():
            base = scenes_by_id[sid]
            out.append(
                prepare_scene(
                    Scene(scene_id=sid, extent=base.extent, labels=list(lbs),
                          features=base.features),
                    meta,
                    train_cfg.policy,
                )
            )
        return out

    def eval_now() -> Optional[EvalReport]:
        if val_dataset is None or id_class_ids is None:
            return None
        preds = {}
        for s in val_dataset.scenes:
            batch = prepare_scene(s, meta, train_cfg.policy)
            preds[s.scene_id] = predict(
                model, batch.features, batch.grid,
                lambda_infer=train_cfg.weights.lambda_cls,
                nms_iou=st_cfg.nms_iou,
                max_out=None,
            )
        return evaluate(preds, val_dataset, id_class_ids)

    audits: list[RoundAudit] = []
    reports: list[Optional[EvalReport]] = []
    last_good = model.copy()

    current = dict(original)
    scene_batches = batches_for(current)
    try:
        fit(model, scene_batches, train_cfg, rng, epochs=st_cfg.epochs)
    except NonFiniteLossError as exc:
        raise SelfTrainingDiverged(0, exc, last_good) from exc
    audits.append(RoundAudit(0, {k: list(v) for k, v in current.items()}, 0,
                             st_cfg.epochs, train_cfg.learning_rate))
    reports.append(eval_now())
    last_good = model.copy()

    ft_epochs = st_cfg.resolved_finetune_epochs()
    ft_lr = train_cfg.learning_rate * st_cfg.finetune_lr_scale
    for round_index in range(1, st_cfg.rounds + 1):
        predictions = {}
        for batch in scene_batches:
            predictions[batch.scene_id] = predict(
                model, batch.features, batch.grid,
                lambda_infer=train_cfg.weights.lambda_cls,
                nms_iou=st_cfg.nms_iou,
                max_out=st_cfg.max_proposals,
            )
        pseudo = filter_and_merge(predictions, original, st_cfg, round_index=round_index)
        current = _merge_labels(original, pseudo)
        scene_batches = batches_for(current)
        try:
            fit(model, scene_batches, train_cfg, rng, epochs=ft_epochs, learning_rate=ft_lr)
        except NonFiniteLossError as exc:
            raise SelfTrainingDiverged(round_index, exc, last_good) from exc
        audits.append(
            RoundAudit(
                round_index,
                {k: list(v) for k, v in current.items()},
                sum(len(v) for v in pseudo.values()),
                ft_epochs,
                ft_lr,
            )
        )
        reports.append(eval_now())
        last_good = model.copy()

    return SelfTrainResult(
        model=model,
        audits=audits,
        reports=reports,
        total_epochs=st_cfg.total_epochs(),
    )
