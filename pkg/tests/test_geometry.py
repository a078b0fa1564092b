"""Box arithmetic: IoU, centerness, and the anchor delta coding.

The delta coder is checked as a round-trip pair, IoU against both hand
values and a brute-force rasterized estimate, and centerness against its
closed form on hand-picked points.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from hybridprop.geometry import (
    Box,
    BoxDeltas,
    centerness,
    centerness_array,
    clip_boxes_array,
    decode_deltas,
    decode_deltas_array,
    encode_deltas,
    encode_deltas_array,
    iou,
    pairwise_iou,
)


def random_boxes(rng: np.random.Generator, n: int, extent: float = 100.0) -> np.ndarray:
    x0 = rng.uniform(0, extent * 0.8, n)
    y0 = rng.uniform(0, extent * 0.8, n)
    w = rng.uniform(1.0, extent * 0.3, n)
    h = rng.uniform(1.0, extent * 0.3, n)
    return np.stack([x0, y0, x0 + w, y0 + h], axis=1)


class TestBox:
    def test_properties(self):
        b = Box(2.0, 3.0, 10.0, 15.0)
        assert b.width == 8.0
        assert b.height == 12.0
        assert b.area == 96.0
        assert b.center == (6.0, 9.0)

    def test_center_round_trip(self):
        b = Box.from_center(6.0, 9.0, 8.0, 12.0)
        assert b == Box(2.0, 3.0, 10.0, 15.0)
        assert b.to_center() == (6.0, 9.0, 8.0, 12.0)

    def test_rejects_inverted_corners(self):
        with pytest.raises(ValueError):
            Box(5.0, 0.0, 4.0, 1.0)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Box(0.0, 0.0, math.nan, 1.0)
        with pytest.raises(ValueError):
            Box(0.0, 0.0, math.inf, 1.0)

    def test_rejects_negative_size(self):
        with pytest.raises(ValueError):
            Box.from_center(0.0, 0.0, -1.0, 1.0)

    def test_zero_area_is_legal(self):
        b = Box(1.0, 1.0, 1.0, 5.0)
        assert b.area == 0.0

    def test_clip(self):
        b = Box(-5.0, 10.0, 250.0, 300.0)
        c = b.clip((240.0, 240.0))
        assert c == Box(0.0, 10.0, 240.0, 240.0)


class TestIou:
    def test_disjoint(self):
        assert iou(Box(0, 0, 1, 1), Box(2, 2, 3, 3)) == 0.0

    def test_identical(self):
        b = Box(1.0, 2.0, 4.0, 6.0)
        assert iou(b, b) == 1.0

    def test_hand_value(self):
        # 2x2 overlap, areas 16 and 4: 4 / (16 + 4 - 4) = 0.25.
        a = Box(0.0, 0.0, 4.0, 4.0)
        b = Box(2.0, 2.0, 4.0, 4.0)
        assert iou(a, b) == pytest.approx(4.0 / 16.0)

    def test_half_shift(self):
        # Unit square shifted by half its width: 0.5 / 1.5 = 1/3.
        a = Box(0.0, 0.0, 1.0, 1.0)
        b = Box(0.5, 0.0, 1.5, 1.0)
        assert iou(a, b) == pytest.approx(1.0 / 3.0)

    def test_degenerate_box_gives_zero(self):
        a = Box(0.0, 0.0, 0.0, 4.0)
        assert iou(a, a) == 0.0

    def test_symmetry_sweep(self):
        rng = np.random.default_rng(7)
        arr = random_boxes(rng, 50)
        for i in range(0, 50, 2):
            a = Box(*arr[i])
            b = Box(*arr[i + 1])
            assert iou(a, b) == pytest.approx(iou(b, a), abs=1e-15)
            assert 0.0 <= iou(a, b) <= 1.0


class TestPairwiseIou:
    def test_matches_scalar(self):
        rng = np.random.default_rng(11)
        a = random_boxes(rng, 12)
        b = random_boxes(rng, 9)
        mat = pairwise_iou(a, b)
        assert mat.shape == (12, 9)
        for i in range(12):
            for j in range(9):
                expected = iou(Box(*a[i]), Box(*b[j]))
                np.testing.assert_allclose(mat[i, j], expected, atol=1e-14)

    def test_empty_inputs(self):
        a = np.zeros((0, 4))
        b = random_boxes(np.random.default_rng(0), 3)
        assert pairwise_iou(a, b).shape == (0, 3)
        assert pairwise_iou(b, a).shape == (3, 0)

    def test_degenerate_rows_are_zero(self):
        a = np.array([[1.0, 1.0, 1.0, 5.0]])
        mat = pairwise_iou(a, a)
        assert mat[0, 0] == 0.0


class TestCenterness:
    def test_center_is_one(self):
        assert centerness(5.0, 5.0, Box(0, 0, 10, 10)) == pytest.approx(1.0)

    def test_hand_value(self):
        # Point at (2, 5) in a 10x10 box: lr = 2/8, tb = 5/5 -> sqrt(0.25).
        assert centerness(2.0, 5.0, Box(0, 0, 10, 10)) == pytest.approx(0.5)

    def test_outside_and_border_are_zero(self):
        box = Box(0, 0, 10, 10)
        assert centerness(-1.0, 5.0, box) == 0.0
        assert centerness(0.0, 5.0, box) == 0.0
        assert centerness(10.0, 10.0, box) == 0.0

    def test_rejects_degenerate_box(self):
        with pytest.raises(ValueError):
            centerness(0.0, 0.0, Box(1, 1, 1, 1))

    def test_array_matches_scalar(self):
        rng = np.random.default_rng(3)
        boxes = random_boxes(rng, 40)
        px = rng.uniform(0, 100, 40)
        py = rng.uniform(0, 100, 40)
        vec = centerness_array(px, py, boxes)
        for i in range(40):
            np.testing.assert_allclose(
                vec[i], centerness(px[i], py[i], Box(*boxes[i])), atol=1e-12
            )

    def test_bounded_by_one(self):
        rng = np.random.default_rng(4)
        boxes = random_boxes(rng, 500)
        cx = 0.5 * (boxes[:, 0] + boxes[:, 2])
        cy = 0.5 * (boxes[:, 1] + boxes[:, 3])
        jitter = rng.uniform(-0.5, 0.5, (500, 2))
        px = cx + jitter[:, 0] * (boxes[:, 2] - boxes[:, 0])
        py = cy + jitter[:, 1] * (boxes[:, 3] - boxes[:, 1])
        vals = centerness_array(px, py, boxes)
        assert np.all(vals >= 0.0)
        assert np.all(vals <= 1.0 + 1e-12)


class TestDeltaCoding:
    def test_identity_encoding(self):
        b = Box(10.0, 10.0, 26.0, 26.0)
        d = encode_deltas(b, b)
        np.testing.assert_allclose(d.as_array(), 0.0, atol=1e-15)

    def test_hand_value(self):
        anchor = Box(0.0, 0.0, 16.0, 16.0)
        target = Box.from_center(12.0, 8.0, 32.0, 8.0)
        d = encode_deltas(anchor, target)
        assert d.dx == pytest.approx(4.0 / 16.0)
        assert d.dy == pytest.approx(0.0)
        assert d.dw == pytest.approx(math.log(2.0))
        assert d.dh == pytest.approx(math.log(0.5))

    def test_round_trip_sweep(self):
        rng = np.random.default_rng(19)
        anchors = random_boxes(rng, 200)
        targets = random_boxes(rng, 200)
        for i in range(200):
            a, t = Box(*anchors[i]), Box(*targets[i])
            back = decode_deltas(a, encode_deltas(a, t))
            np.testing.assert_allclose(back.as_array(), t.as_array(), atol=1e-9)

    def test_array_matches_scalar(self):
        rng = np.random.default_rng(23)
        anchors = random_boxes(rng, 64)
        targets = random_boxes(rng, 64)
        enc = encode_deltas_array(anchors, targets)
        for i in range(64):
            scalar = encode_deltas(Box(*anchors[i]), Box(*targets[i]))
            np.testing.assert_allclose(enc[i], scalar.as_array(), atol=1e-12)
        dec = decode_deltas_array(anchors, enc)
        np.testing.assert_allclose(dec, targets, atol=1e-9)

    def test_degenerate_anchor_rejected(self):
        flat = Box(0.0, 0.0, 0.0, 16.0)
        tgt = Box(0.0, 0.0, 4.0, 4.0)
        with pytest.raises(ValueError):
            encode_deltas(flat, tgt)
        with pytest.raises(ValueError):
            decode_deltas(flat, BoxDeltas(0.0, 0.0, 0.0, 0.0))

    def test_degenerate_target_rejected(self):
        anchor = Box(0.0, 0.0, 16.0, 16.0)
        with pytest.raises(ValueError):
            encode_deltas(anchor, Box(2.0, 2.0, 2.0, 6.0))

    def test_non_finite_deltas_rejected(self):
        with pytest.raises(ValueError):
            BoxDeltas(0.0, math.inf, 0.0, 0.0)


class TestClipBoxesArray:
    def test_clips_to_extent(self):
        boxes = np.array([[-3.0, -4.0, 10.0, 12.0], [5.0, 5.0, 999.0, 999.0]])
        out = clip_boxes_array(boxes, (240.0, 120.0))
        np.testing.assert_allclose(out[0], [0.0, 0.0, 10.0, 12.0])
        np.testing.assert_allclose(out[1], [5.0, 5.0, 240.0, 120.0])

    def test_does_not_mutate_input(self):
        boxes = np.array([[-1.0, 0.0, 5.0, 5.0]])
        before = boxes.copy()
        clip_boxes_array(boxes, (4.0, 4.0))
        np.testing.assert_array_equal(boxes, before)
