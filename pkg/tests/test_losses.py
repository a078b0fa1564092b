"""Loss terms, their blend, the baseline reductions, and gradient checks.

Expected numbers in TestFrozenValues are derived by hand from the loss
definitions and frozen as literals, so a regression in any term shows up
as a numeric mismatch rather than a silently shifted baseline.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from hybridprop.losses import (
    HeadBatch,
    LossWeights,
    binary_cross_entropy,
    classification_baseline_loss,
    gradient_check,
    hybrid_loss,
    localization_baseline_loss,
    quality_focal_grad,
    quality_focal_loss,
    score_weighted_l1,
    sigmoid,
)


def random_batch(rng: np.random.Generator, allow_empty: bool = False) -> HeadBatch:
    """A random but kink-free batch: predictions stay well away from their
    targets so central differences see smooth loss surfaces.
    """
    n_cls = int(rng.integers(0 if allow_empty else 1, 12))
    n_lq = int(rng.integers(0 if allow_empty else 1, 12))
    n_box = int(rng.integers(0 if allow_empty else 1, 8))
    cls_logits = rng.uniform(-3, 3, n_cls)
    cls_targets = rng.integers(0, 2, n_cls).astype(float)
    lq_logits = rng.uniform(-3, 3, n_lq)
    # Keep |q* - q| > 1e-2 so the focal weight is differentiable at the
    # probe points.
    q = sigmoid(lq_logits)
    lq_targets = np.clip(q + rng.choice([-1, 1], n_lq) * rng.uniform(0.05, 0.4, n_lq), 0.0, 1.0)
    bump = np.abs(lq_targets - q) < 1e-2
    lq_targets[bump] = np.clip(q[bump] + 0.2, 0.0, 1.0)
    box_deltas = rng.uniform(-1, 1, (n_box, 4))
    box_targets = box_deltas + rng.choice([-1, 1], (n_box, 4)) * rng.uniform(0.05, 0.5, (n_box, 4))
    box_scores = rng.uniform(0.1, 1.0, n_box)
    return HeadBatch(
        cls_logits, cls_targets, lq_logits, lq_targets,
        box_deltas, box_targets, box_scores,
    )


def random_weights(rng: np.random.Generator) -> LossWeights:
    return LossWeights(
        lambda_cls=float(rng.uniform()),
        lambda_box=float(rng.uniform(0.0, 12.0)),
        gamma=float(rng.choice([0.0, 1.0, 1.5, 2.0, 3.0])),
        beta=float(rng.choice([1.0, 2.0, 3.0])),
        quality_loss=str(rng.choice(["lqf", "l1"])),
    )


class TestSigmoid:
    def test_extreme_logits_are_finite(self):
        z = np.array([-1e4, -50.0, 0.0, 50.0, 1e4])
        s = sigmoid(z)
        assert np.all(np.isfinite(s))
        assert s[0] == 0.0 and s[-1] == 1.0
        assert s[2] == 0.5

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        z = rng.uniform(-30, 30, 1000)
        np.testing.assert_allclose(sigmoid(z) + sigmoid(-z), 1.0, atol=1e-12)

    def test_scalar_shape(self):
        assert sigmoid(0.0).shape == ()


class TestQualityFocalLoss:
    def test_zero_at_target(self):
        q = np.array([0.3, 0.8])
        np.testing.assert_allclose(quality_focal_loss(q, q, gamma=2.0), 0.0, atol=1e-30)

    def test_gamma_zero_is_plain_bce(self):
        rng = np.random.default_rng(1)
        q = rng.uniform(0.05, 0.95, 50)
        t = rng.uniform(0, 1, 50)
        np.testing.assert_allclose(
            quality_focal_loss(q, t, gamma=0.0), binary_cross_entropy(q, t), atol=1e-14
        )

    def test_focal_weight_shrinks_near_target(self):
        # Same BCE distance in probability, smaller focal weight closer in.
        far = quality_focal_loss(np.array([0.2]), np.array([0.9]), 2.0)
        near = quality_focal_loss(np.array([0.8]), np.array([0.9]), 2.0)
        assert near[0] < far[0]

    def test_rejects_negative_gamma(self):
        with pytest.raises(ValueError):
            quality_focal_loss(np.array([0.5]), np.array([0.5]), gamma=-1.0)

    def test_rejects_out_of_range_probs(self):
        with pytest.raises(ValueError):
            quality_focal_loss(np.array([1.5]), np.array([0.5]))

    def test_grad_matches_finite_difference(self):
        rng = np.random.default_rng(2)
        logits = rng.uniform(-2.5, 2.5, 200)
        targets = rng.uniform(0.0, 1.0, 200)
        # Skip near-target rows; the focal weight has a kink there.
        keep = np.abs(sigmoid(logits) - targets) > 1e-2
        logits, targets = logits[keep], targets[keep]
        for gamma in (0.0, 1.0, 2.0):
            analytic = quality_focal_grad(sigmoid(logits), targets, gamma)
            h = 1e-6
            hi = quality_focal_loss(sigmoid(logits + h), targets, gamma)
            lo = quality_focal_loss(sigmoid(logits - h), targets, gamma)
            numeric = (hi - lo) / (2 * h)
            np.testing.assert_allclose(analytic, numeric, atol=5e-6)


class TestScoreWeightedL1:
    def test_score_one_is_plain_l1(self):
        rng = np.random.default_rng(3)
        d = rng.uniform(-1, 1, (20, 4))
        t = rng.uniform(-1, 1, (20, 4))
        rows = score_weighted_l1(d, t, np.ones(20), beta=2.0)
        np.testing.assert_allclose(rows, np.abs(d - t).sum(axis=1), atol=1e-14)

    def test_score_zero_kills_the_row(self):
        d = np.array([[1.0, 1.0, 1.0, 1.0]])
        t = np.zeros((1, 4))
        assert score_weighted_l1(d, t, np.array([0.0]), beta=2.0)[0] == 0.0

    def test_beta_weighting(self):
        d = np.array([[1.0, 0.0, 0.0, 0.0]])
        t = np.zeros((1, 4))
        half = score_weighted_l1(d, t, np.array([0.5]), beta=2.0)[0]
        assert half == pytest.approx(0.25)
        cubed = score_weighted_l1(d, t, np.array([0.5]), beta=3.0)[0]
        assert cubed == pytest.approx(0.125)

    def test_rejects_bad_scores(self):
        with pytest.raises(ValueError):
            score_weighted_l1(np.zeros((1, 4)), np.zeros((1, 4)), np.array([1.5]))


class TestFrozenValues:
    """Hand-derived values pinned as literals."""

    def test_quality_focal_single_point(self):
        # |1 - 0.5|^2 * (-ln 0.5) = 0.25 * 0.693147... = 0.173287...
        got = quality_focal_loss(np.array([0.5]), np.array([1.0]), gamma=2.0)[0]
        assert got == pytest.approx(0.25 * -math.log(0.5), abs=1e-15)
        assert got == pytest.approx(0.17328679513998632, abs=1e-15)

    def test_single_sample_total(self):
        # One row per head: c = q = sigmoid(0) = 0.5, both targets 1,
        # box residual |0.1| + |0.2| + |0.3| + |0.4| = 1.0 at score 0.5.
        #   cls  = -ln 0.5                 = 0.6931471805599453
        #   lq   = 0.25 * -ln 0.5          = 0.1732867951399863
        #   box  = 0.5^2 * 1.0             = 0.25
        #   total = 0.5 cls + 0.5 lq + 2 box = 0.9332169878499658
        batch = HeadBatch(
            cls_logits=[0.0], cls_targets=[1.0],
            lq_logits=[0.0], lq_targets=[1.0],
            box_deltas=[[0.1, -0.2, 0.3, -0.4]], box_targets=[[0.0, 0.0, 0.0, 0.0]],
            box_scores=[0.5],
        )
        weights = LossWeights(lambda_cls=0.5, lambda_box=2.0, gamma=2.0, beta=2.0)
        out = hybrid_loss(batch, weights)
        assert out.cls_term == pytest.approx(0.6931471805599453, abs=1e-15)
        assert out.lq_term == pytest.approx(0.17328679513998632, abs=1e-15)
        assert out.box_term == pytest.approx(0.25, abs=1e-15)
        assert out.total == pytest.approx(0.9332169878499658, abs=1e-14)


class TestHybridLoss:
    def test_empty_sections_contribute_zero(self):
        empty = HeadBatch([], [], [], [], np.zeros((0, 4)), np.zeros((0, 4)), [])
        out = hybrid_loss(empty, LossWeights())
        assert out.total == 0.0
        assert out.d_cls_logits.size == 0
        assert out.d_lq_logits.size == 0
        assert out.d_box_deltas.shape == (0, 4)

    def test_blend_is_affine_in_lambda(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            batch = random_batch(rng, allow_empty=True)
            kw = dict(lambda_box=3.0, gamma=2.0, beta=2.0)
            t0 = hybrid_loss(batch, LossWeights(lambda_cls=0.0, **kw)).total
            t1 = hybrid_loss(batch, LossWeights(lambda_cls=1.0, **kw)).total
            tm = hybrid_loss(batch, LossWeights(lambda_cls=0.5, **kw)).total
            assert tm == pytest.approx(0.5 * (t0 + t1), abs=1e-12)

    def test_lambda_one_ignores_lq_gradient(self):
        rng = np.random.default_rng(6)
        batch = random_batch(rng)
        out = hybrid_loss(batch, LossWeights(lambda_cls=1.0, lambda_box=1.0))
        np.testing.assert_array_equal(out.d_lq_logits, 0.0)
        assert np.any(out.d_cls_logits != 0.0)

    def test_lambda_zero_ignores_cls_gradient(self):
        rng = np.random.default_rng(7)
        batch = random_batch(rng)
        out = hybrid_loss(batch, LossWeights(lambda_cls=0.0, lambda_box=1.0))
        np.testing.assert_array_equal(out.d_cls_logits, 0.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            LossWeights(lambda_cls=1.5)
        with pytest.raises(ValueError):
            LossWeights(lambda_box=-1.0)
        with pytest.raises(ValueError):
            LossWeights(quality_loss="huber")
        with pytest.raises(ValueError):
            HeadBatch([0.0], [0.5], [], [], np.zeros((0, 4)), np.zeros((0, 4)), [])


class TestBaselineIdentities:
    def test_classification_reduction(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            batch = random_batch(rng, allow_empty=True)
            batch.box_scores = np.ones_like(batch.box_scores)
            lam_box = float(rng.uniform(0, 12))
            full = hybrid_loss(batch, LossWeights(lambda_cls=1.0, lambda_box=lam_box)).total
            base = classification_baseline_loss(batch, lambda_box=lam_box)
            assert abs(full - base) <= 1e-12

    def test_localization_reduction(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            batch = random_batch(rng, allow_empty=True)
            batch.box_scores = np.ones_like(batch.box_scores)
            lam_box = float(rng.uniform(0, 12))
            full = hybrid_loss(
                batch,
                LossWeights(lambda_cls=0.0, lambda_box=lam_box, quality_loss="l1"),
            ).total
            base = localization_baseline_loss(batch, lambda_box=lam_box)
            assert abs(full - base) <= 1e-12


class TestGradientCheck:
    def test_random_batches(self):
        rng = np.random.default_rng(10)
        for _ in range(25):
            batch = random_batch(rng)
            weights = random_weights(rng)
            assert gradient_check(batch, weights, epsilon=1e-5) < 1e-4

    def test_epsilon_validation(self):
        batch = random_batch(np.random.default_rng(11))
        with pytest.raises(ValueError):
            gradient_check(batch, LossWeights(), epsilon=1.0)
