"""Objectness blending, NMS, and top-k selection."""

from __future__ import annotations

import numpy as np
import pytest

from hybridprop.geometry import Box
from hybridprop.scoring import (
    ScoredProposal,
    blend_objectness,
    nms,
    rescore,
    top_k,
)


def make_proposal(box: Box, cls_score: float, lq_score: float, lam: float = 0.5) -> ScoredProposal:
    return ScoredProposal(
        box=box,
        cls_score=cls_score,
        lq_score=lq_score,
        objectness=blend_objectness(cls_score, lq_score, lam),
    )


def random_proposals(rng: np.random.Generator, n: int, lam: float = 0.5) -> list[ScoredProposal]:
    out = []
    for _ in range(n):
        x0, y0 = rng.uniform(0, 80, 2)
        w, h = rng.uniform(2, 30, 2)
        out.append(
            make_proposal(
                Box(x0, y0, x0 + w, y0 + h),
                float(rng.uniform()), float(rng.uniform()), lam,
            )
        )
    return out


class TestBlendObjectness:
    def test_endpoints(self):
        assert blend_objectness(0.9, 0.2, 1.0) == 0.9
        assert blend_objectness(0.9, 0.2, 0.0) == 0.2

    def test_midpoint(self):
        assert blend_objectness(0.8, 0.4, 0.5) == pytest.approx(0.6)

    def test_convexity_sweep(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            c, q, lam = rng.uniform(size=3)
            v = blend_objectness(c, q, lam)
            assert min(c, q) - 1e-12 <= v <= max(c, q) + 1e-12

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            blend_objectness(1.2, 0.5, 0.5)
        with pytest.raises(ValueError):
            blend_objectness(0.5, -0.1, 0.5)
        with pytest.raises(ValueError):
            blend_objectness(0.5, 0.5, 2.0)

    def test_proposal_score_validation(self):
        with pytest.raises(ValueError):
            ScoredProposal(Box(0, 0, 1, 1), cls_score=1.5, lq_score=0.5, objectness=0.5)


class TestRescore:
    def test_new_blend_weight(self):
        rng = np.random.default_rng(13)
        props = random_proposals(rng, 30, lam=0.5)
        for lam in (0.0, 0.25, 1.0):
            rescored = rescore(props, lam)
            for p, r in zip(props, rescored):
                assert r.objectness == pytest.approx(
                    lam * p.cls_score + (1 - lam) * p.lq_score
                )
                assert r.cls_score == p.cls_score
                assert r.lq_score == p.lq_score

    def test_leaves_input_alone(self):
        props = [make_proposal(Box(0, 0, 2, 2), 0.9, 0.1, 0.5)]
        rescore(props, 0.0)
        assert props[0].objectness == pytest.approx(0.5)


class TestNms:
    def test_suppresses_heavy_overlap(self):
        a = make_proposal(Box(0, 0, 10, 10), 0.9, 0.9)
        b = make_proposal(Box(1, 1, 11, 11), 0.5, 0.5)  # IoU with a ~ 0.68
        c = make_proposal(Box(50, 50, 60, 60), 0.7, 0.7)
        kept = nms([a, b, c], iou_threshold=0.5)
        assert [p.box for p in kept] == [a.box, c.box]

    def test_threshold_is_strict(self):
        # IoU exactly 1/3 survives a threshold of 1/3.
        a = make_proposal(Box(0, 0, 1, 1), 0.9, 0.9)
        b = make_proposal(Box(0.5, 0, 1.5, 1), 0.8, 0.8)
        kept = nms([a, b], iou_threshold=1.0 / 3.0)
        assert len(kept) == 2

    def test_keeps_descending_order(self):
        rng = np.random.default_rng(2)
        kept = nms(random_proposals(rng, 100), iou_threshold=0.5)
        scores = [p.objectness for p in kept]
        assert scores == sorted(scores, reverse=True)

    def test_tie_breaks_by_input_order(self):
        a = make_proposal(Box(0, 0, 10, 10), 0.8, 0.8)
        b = make_proposal(Box(2, 2, 12, 12), 0.8, 0.8)
        kept = nms([a, b], iou_threshold=0.5)
        assert kept[0].box == a.box

    def test_survivors_are_mutually_separated(self):
        rng = np.random.default_rng(31)
        for threshold in (0.3, 0.5, 0.7):
            kept = nms(random_proposals(rng, 120), iou_threshold=threshold)
            from hybridprop.geometry import iou as scalar_iou

            for i in range(len(kept)):
                for j in range(i + 1, len(kept)):
                    assert scalar_iou(kept[i].box, kept[j].box) <= threshold + 1e-12

    def test_empty_input(self):
        assert nms([], 0.5) == []

    def test_zero_area_boxes_survive(self):
        a = make_proposal(Box(5, 5, 5, 9), 0.9, 0.9)
        b = make_proposal(Box(5, 5, 5, 9), 0.8, 0.8)
        assert len(nms([a, b], 0.5)) == 2

    def test_rejects_bad_threshold(self):
        with pytest.raises(ValueError):
            nms([], iou_threshold=1.5)


class TestTopK:
    def test_selects_highest(self):
        rng = np.random.default_rng(17)
        props = random_proposals(rng, 50)
        got = top_k(props, 5)
        expected = sorted((p.objectness for p in props), reverse=True)[:5]
        np.testing.assert_allclose([p.objectness for p in got], expected)

    def test_k_larger_than_input(self):
        props = random_proposals(np.random.default_rng(0), 3)
        assert len(top_k(props, 10)) == 3

    def test_k_zero(self):
        props = random_proposals(np.random.default_rng(0), 3)
        assert top_k(props, 0) == []

    def test_rejects_negative_k(self):
        with pytest.raises(ValueError):
            top_k([], -1)

    def test_stable_ties(self):
        a = make_proposal(Box(0, 0, 1, 1), 0.5, 0.5)
        b = make_proposal(Box(5, 5, 6, 6), 0.5, 0.5)
        assert top_k([a, b], 1)[0].box == a.box
