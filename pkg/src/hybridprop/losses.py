"""Training losses for the three proposal heads and their gradients.

The total loss is a convex blend of a classification term and a
localization-quality term, plus a box regression term:

    total = lambda_cls * mean(CE)            over sampled cls anchors
          + (1 - lambda_cls) * mean(LQ loss) over quality positives
          + lambda_box * mean(weighted L1)   over box positives

The quality loss is a focal-weighted binary cross entropy against soft
targets (|q* - q|^gamma * BCE), and the box loss is L1 scaled by the matched
label's confidence raised to beta, which softens supervision from uncertain
pseudo-labels. Gradients are taken w.r.t. pre-sigmoid logits for both score
heads and w.r.t. raw deltas for the box head.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

PROB_CLAMP = 1e-6

QUALITY_LOSS_KINDS = ("lqf", "l1")

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class LossWeights:
    """Blend weights and loss shape parameters.

    lambda_cls=1 reduces training to a plain classification proposal loss;
    lambda_cls=0 (with quality_loss="l1") reduces it to a pure
    localization-quality loss. gamma=0 turns the focal weight off.
    """

    lambda_cls: float = 0.25
    lambda_box: float = 10.0
    gamma: float = 2.0
    beta: float = 2.0
    quality_loss: str = "lqf"

    def __post_init__(self) -> None:
        if not 0.0 <= self.lambda_cls <= 1.0:
            raise ValueError(f"lambda_cls must be in [0, 1], got {self.lambda_cls}")
        if self.lambda_box < 0.0:
            raise ValueError(f"lambda_box must be nonnegative, got {self.lambda_box}")
        if self.gamma < 0.0 or self.beta < 0.0:
            raise ValueError(f"gamma and beta must be nonnegative, got {self.gamma}, {self.beta}")
        if self.quality_loss not in QUALITY_LOSS_KINDS:
            raise ValueError(
                f"quality_loss must be one of {QUALITY_LOSS_KINDS}, got {self.quality_loss!r}"
            )


@dataclass
class HeadBatch:
    """One training batch across the three heads.

    The box rows are the positive subset of the sampled classification
    anchors: negatives carry no box supervision, so the classification gate
    on the box term is applied here, at construction, rather than by a mask
    inside the loss. Any of the three sections may be empty.
    """

    cls_logits: np.ndarray
    cls_targets: np.ndarray
    lq_logits: np.ndarray
    lq_targets: np.ndarray
    box_deltas: np.ndarray
    box_targets: np.ndarray
    box_scores: np.ndarray

    def __post_init__(self) -> None:
        self.cls_logits = np.asarray(self.cls_logits, dtype=np.float64).reshape(-1)
        self.cls_targets = np.asarray(self.cls_targets, dtype=np.float64).reshape(-1)
        self.lq_logits = np.asarray(self.lq_logits, dtype=np.float64).reshape(-1)
        self.lq_targets = np.asarray(self.lq_targets, dtype=np.float64).reshape(-1)
        self.box_deltas = np.asarray(self.box_deltas, dtype=np.float64).reshape(-1, 4)
        self.box_targets = np.asarray(self.box_targets, dtype=np.float64).reshape(-1, 4)
        self.box_scores = np.asarray(self.box_scores, dtype=np.float64).reshape(-1)
        if self.cls_logits.shape != self.cls_targets.shape:
            raise ValueError("cls_logits and cls_targets must have equal length")
        if not np.all(np.isin(self.cls_targets, (0.0, 1.0))):
            raise ValueError("cls_targets must be binary")
        if self.lq_logits.shape != self.lq_targets.shape:
            raise ValueError("lq_logits and lq_targets must have equal length")
        if self.lq_targets.size and not (
            np.all(self.lq_targets >= 0.0) and np.all(self.lq_targets <= 1.0)
        ):
            raise ValueError("lq_targets must lie in [0, 1]")
        n_box = self.box_deltas.shape[0]
        if self.box_targets.shape[0] != n_box or self.box_scores.shape[0] != n_box:
            raise ValueError("box_deltas, box_targets, box_scores must have equal length")
        if self.box_scores.size and not (
            np.all(self.box_scores >= 0.0) and np.all(self.box_scores <= 1.0)
        ):
            raise ValueError("box_scores must lie in [0, 1]")

    @property
    def n_cls(self) -> int:
        return self.cls_logits.shape[0]

    @property
    def n_lq(self) -> int:
        return self.lq_logits.shape[0]

    @property
    def n_box(self) -> int:
        return self.box_deltas.shape[0]


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term means (unweighted) plus the weighted total and its gradients.

    Gradient arrays align with the batch arrays and already include the
    blend/term weights, i.e. they are gradients of ``total``.
    """

    cls_term: float
    lq_term: float
    box_term: float
    total: float
    d_cls_logits: np.ndarray
    d_lq_logits: np.ndarray
    d_box_deltas: np.ndarray


def sigmoid(z: ArrayLike) -> np.ndarray:
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    flat = np.atleast_1d(z)
    out = np.empty_like(flat)
    pos = flat >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-flat[pos]))
    ez = np.exp(flat[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out.reshape(z.shape)


def binary_cross_entropy(q: ArrayLike, q_star: ArrayLike) -> np.ndarray:
    """Cross entropy against soft targets, with probabilities clamped away
    from 0 and 1 before the logs.
    """
    q = np.asarray(q, dtype=np.float64)
    q_star = np.asarray(q_star, dtype=np.float64)
    _validate_probs(q, "q")
    _validate_probs(q_star, "q_star")
    qc = np.clip(q, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(q_star * np.log(qc) + (1.0 - q_star) * np.log1p(-qc))


def _validate_probs(p: np.ndarray, name: str) -> None:
    if p.size and (not np.all(np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0)):
        raise ValueError(f"{name} must lie in [0, 1], got range "
                         f"[{np.min(p)}, {np.max(p)}]")


def quality_focal_loss(q: ArrayLike, q_star: ArrayLike, gamma: float = 2.0) -> np.ndarray:
    """Focal-weighted cross entropy against a soft quality target.

    |q* - q|^gamma * BCE(q, q*). The weight vanishes as the prediction
    approaches the target, so with gamma > 0 the loss is zero exactly at
    q = q*; gamma = 0 recovers plain cross entropy.
    """
    if gamma < 0.0:
        raise ValueError(f"gamma must be nonnegative, got {gamma}")
    q = np.asarray(q, dtype=np.float64)
    q_star = np.asarray(q_star, dtype=np.float64)
    bce = binary_cross_entropy(q, q_star)
    return np.abs(q_star - q) ** gamma * bce


def quality_focal_grad(q: ArrayLike, q_star: ArrayLike, gamma: float = 2.0) -> np.ndarray:
    """Gradient of :func:`quality_focal_loss` w.r.t. the pre-sigmoid logit.

    Two chain-rule pieces: the focal weight's dependence on q, and the cross
    entropy's. The former is masked to zero where q = q*, where the true
    derivative vanishes for gamma >= 1.
    """
    if gamma < 0.0:
        raise ValueError(f"gamma must be nonnegative, got {gamma}")
    q = np.asarray(q, dtype=np.float64)
    q_star = np.asarray(q_star, dtype=np.float64)
    absu = np.abs(q_star - q)
    main = absu**gamma * (q - q_star)
    if gamma == 0.0:
        return main
    bce = binary_cross_entropy(q, q_star)
    nonzero = absu > 0.0
    focal = np.zeros_like(q)
    au = absu[nonzero]
    focal[nonzero] = (
        gamma * au ** (gamma - 1.0)
        * np.sign(q - q_star)[nonzero]
        * bce[nonzero]
        * (q * (1.0 - q))[nonzero]
    )
    return focal + main


def score_weighted_l1(
    deltas: np.ndarray, targets: np.ndarray, score: ArrayLike, beta: float = 2.0
) -> np.ndarray:
    """Box regression loss: the matched label's confidence raised to beta
    scales an L1 over the four delta components.

    Ground-truth labels have score 1 and keep plain L1; low-confidence
    pseudo-labels are downweighted smoothly, vanishing at score 0.
    """
    if beta < 0.0:
        raise ValueError(f"beta must be nonnegative, got {beta}")
    deltas = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 4)
    score = np.asarray(score, dtype=np.float64).reshape(-1)
    _validate_probs(score, "score")
    rows = np.abs(deltas - targets).sum(axis=1)
    return score**beta * rows


def _cls_section(batch: HeadBatch) -> tuple[float, np.ndarray]:
    """Mean cross entropy over the sampled cls anchors and d(mean)/d(logit)."""
    n = max(batch.n_cls, 1)
    if batch.n_cls == 0:
        return 0.0, np.zeros(0, dtype=np.float64)
    c = sigmoid(batch.cls_logits)
    term = float(binary_cross_entropy(c, batch.cls_targets).sum() / n)
    grad = (c - batch.cls_targets) / n
    return term, grad


def _lq_section(batch: HeadBatch, weights: LossWeights) -> tuple[float, np.ndarray]:
    """Mean quality loss over quality positives and d(mean)/d(logit)."""
    n = max(batch.n_lq, 1)
    if batch.n_lq == 0:
        return 0.0, np.zeros(0, dtype=np.float64)
    q = sigmoid(batch.lq_logits)
    if weights.quality_loss == "lqf":
        term = float(quality_focal_loss(q, batch.lq_targets, weights.gamma).sum() / n)
        grad = quality_focal_grad(q, batch.lq_targets, weights.gamma) / n
    else:
        term = float(np.abs(q - batch.lq_targets).sum() / n)
        grad = np.sign(q - batch.lq_targets) * q * (1.0 - q) / n
    return term, grad


def _box_section(batch: HeadBatch, beta: float) -> tuple[float, np.ndarray]:
    """Mean weighted L1 over box positives and d(mean)/d(deltas)."""
    n = max(batch.n_box, 1)
    if batch.n_box == 0:
        return 0.0, np.zeros((0, 4), dtype=np.float64)
    rows = score_weighted_l1(batch.box_deltas, batch.box_targets, batch.box_scores, beta)
    term = float(rows.sum() / n)
    grad = (batch.box_scores**beta)[:, None] * np.sign(batch.box_deltas - batch.box_targets) / n
    return term, grad


def hybrid_loss(batch: HeadBatch, weights: LossWeights) -> LossBreakdown:
    """The blended three-head loss with analytic gradients.

    Empty sections contribute zero (normalizers are guarded at 1) and yield
    empty gradient arrays. The stored per-term values are unweighted means;
    ``total`` applies lambda_cls, (1 - lambda_cls), and lambda_box.
    """
    cls_term, d_cls = _cls_section(batch)
    lq_term, d_lq = _lq_section(batch, weights)
    box_term, d_box = _box_section(batch, weights.beta)
    total = (
        weights.lambda_cls * cls_term
        + (1.0 - weights.lambda_cls) * lq_term
        + weights.lambda_box * box_term
    )
    return LossBreakdown(
        cls_term=cls_term,
        lq_term=lq_term,
        box_term=box_term,
        total=float(total),
        d_cls_logits=weights.lambda_cls * d_cls,
        d_lq_logits=(1.0 - weights.lambda_cls) * d_lq,
        d_box_deltas=weights.lambda_box * d_box,
    )


def classification_baseline_loss(batch: HeadBatch, lambda_box: float = 10.0) -> float:
    """Plain proposal loss: mean cross entropy plus weighted mean box L1.

    Matches :func:`hybrid_loss` with lambda_cls=1 exactly when every box
    score is 1.
    """
    cls_term, _ = _cls_section(batch)
    box_term = _plain_box_term(batch)
    return cls_term + lambda_box * box_term


def localization_baseline_loss(batch: HeadBatch, lambda_box: float = 10.0) -> float:
    """Pure localization-quality loss: mean L1 on predicted quality plus
    weighted mean box L1.

    Matches :func:`hybrid_loss` with lambda_cls=0 and quality_loss="l1"
    exactly when every box score is 1.
    """
    n = max(batch.n_lq, 1)
    if batch.n_lq:
        q = sigmoid(batch.lq_logits)
        lq_term = float(np.abs(q - batch.lq_targets).sum() / n)
    else:
        lq_term = 0.0
    return lq_term + lambda_box * _plain_box_term(batch)


def _plain_box_term(batch: HeadBatch) -> float:
    n = max(batch.n_box, 1)
    if batch.n_box == 0:
        return 0.0
    rows = score_weighted_l1(
        batch.box_deltas, batch.box_targets, np.ones(batch.n_box), beta=2.0
    )
    return float(rows.sum() / n)


def gradient_check(batch: HeadBatch, weights: LossWeights, epsilon: float = 1e-5) -> float:
    """Central-difference check of every analytic gradient component.

    Returns the maximum relative error over all logit and delta coordinates,
    with the comparison floored at 1e-8 so exact zero gradients compare
    cleanly. At an L1 kink the central difference evaluates to 0, matching
    the sign(0) = 0 convention.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon must lie in [1e-7, 1e-3], got {epsilon}")

    breakdown = hybrid_loss(batch, weights)

    def total_with(cls_l: np.ndarray, lq_l: np.ndarray, box_d: np.ndarray) -> float:
        probe = HeadBatch(
            cls_l, batch.cls_targets, lq_l, batch.lq_targets,
            box_d, batch.box_targets, batch.box_scores,
        )
        return hybrid_loss(probe, weights).total

    worst = 0.0
    sections = (
        (batch.cls_logits, breakdown.d_cls_logits, 0),
        (batch.lq_logits, breakdown.d_lq_logits, 1),
        (batch.box_deltas, breakdown.d_box_deltas, 2),
    )
    for values, analytic, which in sections:
        flat = values.reshape(-1)
        for i in range(flat.size):
            args_hi = [batch.cls_logits, batch.lq_logits, batch.box_deltas]
            args_lo = [a.copy() for a in args_hi]
            args_hi = [a.copy() for a in args_hi]
            args_hi[which].reshape(-1)[i] += epsilon
            args_lo[which].reshape(-1)[i] -= epsilon
            numeric = (total_with(*args_hi) - total_with(*args_lo)) / (2.0 * epsilon)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
