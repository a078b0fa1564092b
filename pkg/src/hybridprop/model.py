"""A small proposal head trained with plain SGD.

Per-anchor features pass through one shared tanh layer into three linear
heads: a classification logit, a localization-quality logit, and four box
deltas. Forward, backward, and the update rule are written out by hand so
every gradient is inspectable; there is no autograd anywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from hybridprop.anchors import (
    CLS_POSITIVE,
    AnchorAssignments,
    AnchorGrid,
    MatchPolicy,
    assign,
    generate_anchors,
    sample_cls,
)
from hybridprop.dataset import Dataset, FeatureMeta, Scene
from hybridprop.geometry import (
    Box,
    clip_boxes_array,
    decode_deltas_array,
    encode_deltas_array,
)
from hybridprop.losses import HeadBatch, LossBreakdown, LossWeights, hybrid_loss, sigmoid
from hybridprop.scoring import ScoredProposal, blend_objectness, nms, top_k

CHECKPOINT_VERSION = 1

PARAM_NAMES = ("W1", "b1", "w_cls", "b_cls", "w_lq", "b_lq", "W_box", "b_box")


class NonFiniteLossError(RuntimeError):
    """Raised when a training step produces a non-finite loss."""

    def __init__(self, scene_id: int, total: float):
        super().__init__(f"non-finite loss {total} on scene {scene_id}")
        self.scene_id = scene_id
        self.total = total


@dataclass
class TrainConfig:
    """SGD and batch construction settings for one training phase."""

    learning_rate: float = 0.05
    epochs: int = 16
    cls_batch_size: int = 64
    pos_fraction: float = 0.5
    weights: LossWeights = field(default_factory=LossWeights)
    policy: MatchPolicy = field(default_factory=MatchPolicy)

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.cls_batch_size < 1:
            raise ValueError(f"cls_batch_size must be >= 1, got {self.cls_batch_size}")
        if not 0.0 <= self.pos_fraction <= 1.0:
            raise ValueError(f"pos_fraction must be in [0, 1], got {self.pos_fraction}")


class ProposalModel:
    """features -> tanh hidden layer -> (cls logit, lq logit, 4 deltas)."""

    def __init__(self, params: dict[str, np.ndarray]):
        missing = set(PARAM_NAMES) - set(params)
        if missing:
            raise ValueError(f"missing parameters: {sorted(missing)}")
        self.W1 = np.asarray(params["W1"], dtype=np.float64)
        self.b1 = np.asarray(params["b1"], dtype=np.float64)
        self.w_cls = np.asarray(params["w_cls"], dtype=np.float64)
        self.b_cls = float(np.asarray(params["b_cls"]))
        self.w_lq = np.asarray(params["w_lq"], dtype=np.float64)
        self.b_lq = float(np.asarray(params["b_lq"]))
        self.W_box = np.asarray(params["W_box"], dtype=np.float64)
        self.b_box = np.asarray(params["b_box"], dtype=np.float64)
        d, h = self.W1.shape
        if self.b1.shape != (h,) or self.w_cls.shape != (h,) or self.w_lq.shape != (h,):
            raise ValueError("parameter shapes are inconsistent with the hidden width")
        if self.W_box.shape != (h, 4) or self.b_box.shape != (4,):
            raise ValueError("box head parameters must be (hidden, 4) and (4,)")

    @property
    def feature_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[1]

    @classmethod
    def init(cls, feature_dim: int, hidden_dim: int, seed: int) -> ProposalModel:
        """Gaussian init scaled by fan-in; all biases start at zero, so a
        fresh model scores every anchor 0.5 on both heads.
        """
        rng = np.random.default_rng(seed)
        return cls(
            {
                "W1": rng.normal(0.0, 1.0 / np.sqrt(feature_dim), (feature_dim, hidden_dim)),
                "b1": np.zeros(hidden_dim),
                "w_cls": rng.normal(0.0, 1.0 / np.sqrt(hidden_dim), hidden_dim),
                "b_cls": 0.0,
                "w_lq": rng.normal(0.0, 1.0 / np.sqrt(hidden_dim), hidden_dim),
                "b_lq": 0.0,
                "W_box": rng.normal(0.0, 1.0 / np.sqrt(hidden_dim), (hidden_dim, 4)),
                "b_box": np.zeros(4),
            }
        )

    @classmethod
    def zeros(cls, feature_dim: int, hidden_dim: int) -> ProposalModel:
        return cls(
            {
                "W1": np.zeros((feature_dim, hidden_dim)),
                "b1": np.zeros(hidden_dim),
                "w_cls": np.zeros(hidden_dim),
                "b_cls": 0.0,
                "w_lq": np.zeros(hidden_dim),
                "b_lq": 0.0,
                "W_box": np.zeros((hidden_dim, 4)),
                "b_box": np.zeros(4),
            }
        )

    def params(self) -> dict[str, np.ndarray]:
        return {
            "W1": self.W1,
            "b1": self.b1,
            "w_cls": self.w_cls,
            "b_cls": np.float64(self.b_cls),
            "w_lq": self.w_lq,
            "b_lq": np.float64(self.b_lq),
            "W_box": self.W_box,
            "b_box": self.b_box,
        }

    def copy(self) -> ProposalModel:
        return ProposalModel({k: np.array(v, copy=True) for k, v in self.params().items()})

    def forward(self, features: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Returns (cls_logits, lq_logits, deltas, hidden); hidden is the
        post-tanh activation needed by :meth:`backward`.
        """
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.feature_dim:
            raise ValueError(f"features must be (anchors, {self.feature_dim}), got {x.shape}")
        hidden = np.tanh(x @ self.W1 + self.b1)
        cls_logits = hidden @ self.w_cls + self.b_cls
        lq_logits = hidden @ self.w_lq + self.b_lq
        deltas = hidden @ self.W_box + self.b_box
        return cls_logits, lq_logits, deltas, hidden

    def backward(
        self,
        features: np.ndarray,
        hidden: np.ndarray,
        g_cls: np.ndarray,
        g_lq: np.ndarray,
        g_box: np.ndarray,
    ) -> dict[str, np.ndarray]:
        """Backprop per-anchor output gradients to parameter gradients.

        The gradient arrays span all anchors; rows outside the training
        batch are zero.
        """
        x = np.asarray(features, dtype=np.float64)
        grads: dict[str, np.ndarray] = {
            "w_cls": hidden.T @ g_cls,
            "b_cls": np.float64(g_cls.sum()),
            "w_lq": hidden.T @ g_lq,
            "b_lq": np.float64(g_lq.sum()),
            "W_box": hidden.T @ g_box,
            "b_box": g_box.sum(axis=0),
        }
        g_hidden = (
            np.outer(g_cls, self.w_cls)
            + np.outer(g_lq, self.w_lq)
            + g_box @ self.W_box.T
        )
        g_pre = g_hidden * (1.0 - hidden * hidden)
        grads["W1"] = x.T @ g_pre
        grads["b1"] = g_pre.sum(axis=0)
        return grads

    def sgd_step(self, grads: dict[str, np.ndarray], learning_rate: float) -> None:
        self.W1 -= learning_rate * grads["W1"]
        self.b1 -= learning_rate * grads["b1"]
        self.w_cls -= learning_rate * grads["w_cls"]
        self.b_cls -= learning_rate * float(grads["b_cls"])
        self.w_lq -= learning_rate * grads["w_lq"]
        self.b_lq -= learning_rate * float(grads["b_lq"])
        self.W_box -= learning_rate * grads["W_box"]
        self.b_box -= learning_rate * grads["b_box"]


@dataclass
class SceneBatch:
    """A scene prepared for training: features, grid, and assignments."""

    scene_id: int
    features: np.ndarray
    grid: AnchorGrid
    assignments: AnchorAssignments
    label_boxes: np.ndarray


def prepare_scene(scene: Scene, meta: FeatureMeta, policy: MatchPolicy) -> SceneBatch:
    """Build the training view of one scene from its labels and features."""
    if scene.features is None:
        raise ValueError(f"scene {scene.scene_id} has no features")
    grid = generate_anchors(scene.extent, meta.stride, meta.anchor_size)
    if scene.features.shape[0] != len(grid):
        raise ValueError(
            f"scene {scene.scene_id}: {scene.features.shape[0]} feature rows "
            f"!= {len(grid)} anchors"
        )
    boxes = [lb.box for lb in scene.labels]
    scores = [lb.pseudo_score for lb in scene.labels]
    assignments = assign(grid, boxes, policy, label_scores=scores)
    label_arr = (
        np.stack([b.as_array() for b in boxes]) if boxes else np.zeros((0, 4))
    )
    return SceneBatch(
        scene_id=scene.scene_id,
        features=scene.features,
        grid=grid,
        assignments=assignments,
        label_boxes=label_arr,
    )


def build_head_batch(
    outputs: tuple[np.ndarray, np.ndarray, np.ndarray],
    scene: SceneBatch,
    sample_idx: np.ndarray,
) -> tuple[HeadBatch, np.ndarray, np.ndarray]:
    """Assemble the loss batch for sampled cls anchors plus all quality
    positives; box rows are the positive subset of the cls sample.

    Returns the batch and the (lq, box) index arrays needed to scatter
    gradients back to anchor rows.
    """
    cls_logits, lq_logits, deltas = outputs
    asg = scene.assignments
    pos_mask = asg.cls_labels[sample_idx] == CLS_POSITIVE
    pos_idx = sample_idx[pos_mask]
    lq_idx = asg.lq_indices
    if pos_idx.size:
        matched = asg.matched_gt[pos_idx]
        box_targets = encode_deltas_array(scene.grid.boxes[pos_idx], scene.label_boxes[matched])
        box_scores = asg.target_scores[pos_idx]
    else:
        box_targets = np.zeros((0, 4))
        box_scores = np.zeros(0)
    batch = HeadBatch(
        cls_logits=cls_logits[sample_idx],
        cls_targets=(asg.cls_labels[sample_idx] == CLS_POSITIVE).astype(np.float64),
        lq_logits=lq_logits[lq_idx],
        lq_targets=asg.lq_targets[lq_idx],
        box_deltas=deltas[pos_idx],
        box_targets=box_targets,
        box_scores=box_scores,
    )
    return batch, lq_idx, pos_idx


def train_step(
    model: ProposalModel,
    scene: SceneBatch,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> LossBreakdown:
    """One SGD step on one scene; mutates the model in place.

    Raises :class:`NonFiniteLossError` if the loss leaves the reals, which
    callers treat as a training bug rather than something to average away.
    """
    cls_logits, lq_logits, deltas, hidden = model.forward(scene.features)
    sample_idx = sample_cls(scene.assignments, cfg.cls_batch_size, cfg.pos_fraction, rng)
    batch, lq_idx, pos_idx = build_head_batch((cls_logits, lq_logits, deltas), scene, sample_idx)
    breakdown = hybrid_loss(batch, cfg.weights)
    if not np.isfinite(breakdown.total):
        raise NonFiniteLossError(scene.scene_id, breakdown.total)

    n = cls_logits.shape[0]
    g_cls = np.zeros(n)
    g_lq = np.zeros(n)
    g_box = np.zeros((n, 4))
    np.add.at(g_cls, sample_idx, breakdown.d_cls_logits)
    np.add.at(g_lq, lq_idx, breakdown.d_lq_logits)
    np.add.at(g_box, pos_idx, breakdown.d_box_deltas)
    grads = model.backward(scene.features, hidden, g_cls, g_lq, g_box)
    model.sgd_step(grads, cfg.learning_rate)
    return breakdown


def fit(
    model: ProposalModel,
    scenes: Sequence[SceneBatch],
    cfg: TrainConfig,
    rng: np.random.Generator,
    epochs: Optional[int] = None,
    learning_rate: Optional[float] = None,
) -> list[float]:
    """Train for a number of epochs, shuffling scene order each epoch.

    Returns the mean total loss per epoch. ``epochs`` and ``learning_rate``
    override the config for fine-tuning phases.
    """
    if not scenes:
        raise ValueError("cannot train on an empty scene list")
    n_epochs = cfg.epochs if epochs is None else epochs
    lr = cfg.learning_rate if learning_rate is None else learning_rate
    step_cfg = TrainConfig(
        learning_rate=lr,
        epochs=n_epochs,
        cls_batch_size=cfg.cls_batch_size,
        pos_fraction=cfg.pos_fraction,
        weights=cfg.weights,
        policy=cfg.policy,
    )
    history: list[float] = []
    for _ in range(n_epochs):
        order = rng.permutation(len(scenes))
        totals = []
        for i in order:
            breakdown = train_step(model, scenes[i], step_cfg, rng)
            totals.append(breakdown.total)
        history.append(float(np.mean(totals)))
    return history


def predict(
    model: ProposalModel,
    features: np.ndarray,
    grid: AnchorGrid,
    lambda_infer: float,
    nms_iou: float = 0.7,
    max_out: Optional[int] = None,
) -> list[ScoredProposal]:
    """Score and decode every anchor, then NMS and keep the best.

    The blend weight here is an inference-time choice; it does not need to
    match the training blend. Decoded boxes are clipped to the scene.
    """
    cls_logits, lq_logits, deltas, _ = model.forward(features)
    cls_scores = sigmoid(cls_logits)
    lq_scores = sigmoid(lq_logits)
    boxes = clip_boxes_array(decode_deltas_array(grid.boxes, deltas), grid.scene_extent)
    proposals = []
    for i in range(boxes.shape[0]):
        c = float(cls_scores[i])
        q = float(lq_scores[i])
        proposals.append(
            ScoredProposal(
                box=Box(*boxes[i]),
                cls_score=c,
                lq_score=q,
                objectness=blend_objectness(c, q, lambda_infer),
            )
        )
    kept = nms(proposals, nms_iou)
    if max_out is not None:
        kept = top_k(kept, max_out)
    return kept


def save_checkpoint(model: ProposalModel, path: str | Path, config: dict) -> None:
    """Write parameters plus a JSON metadata record to an .npz file."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "feature_dim": model.feature_dim,
        "hidden_dim": model.hidden_dim,
        "config": config,
    }
    arrays = {k: np.asarray(v) for k, v in model.params().items()}
    np.savez(path, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
             **arrays)


def load_checkpoint(path: str | Path) -> tuple[ProposalModel, dict]:
    """Read a checkpoint; rejects unknown versions and missing arrays."""
    with np.load(path) as data:
        if "meta" not in data:
            raise ValueError(f"{path}: not a model checkpoint (no meta record)")
        meta = json.loads(bytes(data["meta"]).decode())
        version = meta.get("version")
        if version != CHECKPOINT_VERSION:
            raise ValueError(
                f"{path}: unsupported checkpoint version {version!r} "
                f"(expected {CHECKPOINT_VERSION})"
            )
        missing = set(PARAM_NAMES) - set(data.files)
        if missing:
            raise ValueError(f"{path}: checkpoint missing arrays {sorted(missing)}")
        model = ProposalModel({k: data[k] for k in PARAM_NAMES})
    return model, meta


def prepare_dataset(dataset: Dataset, policy: MatchPolicy) -> list[SceneBatch]:
    """Training views for every scene in the dataset."""
    if dataset.feature_meta is None:
        raise ValueError("dataset has no feature metadata; synthesize or load features first")
    return [prepare_scene(s, dataset.feature_meta, policy) for s in dataset.scenes]
