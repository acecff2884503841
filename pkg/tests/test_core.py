import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from labelsmith import _kernels
from labelsmith.core import BBox, BoxTransform, Detection, apply_transform, boxes_array, intersects, inverse, iou, match
from labelsmith.exceptions import ConfigError, DataError

from conftest import brute_greedy, det, lb, random_int_boxes

coord = st.floats(0, 500, allow_nan=False)
size = st.floats(0.5, 300, allow_nan=False)
boxes = st.builds(BBox, coord, coord, size, size)


class TestBBox:
    def test_corners(self):
        b = BBox(10, 20, 30, 40)
        assert (b.x2, b.y2, b.area) == (40, 60, 1200)
        assert BBox.from_corners(10, 20, 40, 60) == b

    @pytest.mark.parametrize("args", [(0, 0, 0, 5), (0, 0, 5, -1), (math.nan, 0, 1, 1), (0, math.inf, 1, 1)])
    def test_invalid(self, args):
        with pytest.raises(DataError):
            BBox(*args)

    def test_score_range(self):
        with pytest.raises(DataError, match="score out of range"):
            Detection(BBox(0, 0, 1, 1), 0, 1.2)


class TestIoU:
    def test_hand_values(self):
        a = BBox(0, 0, 10, 10)
        assert iou(a, a) == 1.0
        assert iou(a, BBox(5, 0, 10, 10)) == pytest.approx(50 / 150)
        assert iou(a, BBox(10, 0, 10, 10)) == 0.0  # touching edges
        assert not intersects(a, BBox(10, 0, 10, 10))

    @settings(max_examples=300, deadline=None)
    @given(boxes, boxes)
    def test_symmetric_and_bounded(self, a, b):
        assert iou(a, b) == iou(b, a)
        assert 0.0 <= iou(a, b) <= 1.0
        assert iou(a, a) == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=300, deadline=None)
    @given(st.lists(boxes, min_size=1, max_size=4), st.lists(boxes, min_size=1, max_size=4))
    def test_kernel_matches_scalar_floats(self, xs, ys):
        m = _kernels.pairwise_iou(boxes_array(xs), boxes_array(ys))
        assert m.tolist() == [[iou(p, q) for q in ys] for p in xs]

    def test_kernel_matches_scalar(self, rng):
        a = random_int_boxes(rng, 30)
        b = random_int_boxes(rng, 25)
        m = _kernels.pairwise_iou(a, b)
        want = np.array([[iou(BBox(*p), BBox(*q)) for q in b] for p in a])
        np.testing.assert_array_equal(m, want)

    def test_empty_inputs(self):
        assert _kernels.pairwise_iou(np.zeros((0, 4)), np.zeros((3, 4))).shape == (0, 3)


class TestMatch:
    def test_brute_force_oracle(self, rng):
        # integer boxes on a small grid produce many exact IoU ties
        for _ in range(500):
            g = random_int_boxes(rng, int(rng.integers(0, 7)), hi=12, smax=8)
            p = random_int_boxes(rng, int(rng.integers(0, 7)), hi=12, smax=8)
            gb = [BBox(*r) for r in g]
            pb = [BBox(*r) for r in p]
            m = match(gb, pb, 0.3)
            if gb and pb:
                want = brute_greedy(_kernels.np_pairwise_iou(g, p), 0.3)
            else:
                want = []
            assert [(a, b) for a, b, _ in m.pairs] == want
            assert sorted(m.unmatched_gt + tuple(a for a, _, _ in m.pairs)) == list(range(len(gb)))
            assert sorted(m.unmatched_pred + tuple(b for _, b, _ in m.pairs)) == list(range(len(pb)))

    def test_greedy_not_optimal_but_deterministic(self):
        # gt0 takes its best pred even though that leaves gt1 unmatched
        gt = [BBox(0, 0, 10, 10), BBox(3, 0, 10, 10)]
        pr = [BBox(1, 0, 10, 10)]
        m = match(gt, pr)
        assert [(a, b) for a, b, _ in m.pairs] == [(0, 0)]
        assert m.unmatched_gt == (1,)

    def test_threshold_inclusive(self):
        m = match([BBox(0, 0, 10, 10)], [BBox(0, 0, 10, 5)], 0.5)
        assert len(m.pairs) == 1

    def test_duck_typing(self):
        m = match([lb(0, 0, 5, 5)], [det(0, 0, 5, 5)])
        assert m.pred_for_gt() == {0: 0} and m.gt_for_pred() == {0: 0}

    @pytest.mark.parametrize("t", [0.0, -0.1, 1.5])
    def test_bad_threshold(self, t):
        with pytest.raises(ConfigError):
            match([], [], t)


class TestTransform:
    def test_hflip(self):
        t = BoxTransform("hflip", 100)
        b = BBox(10, 5, 20, 7)
        assert apply_transform(t, b) == BBox(70, 5, 20, 7)
        assert apply_transform(inverse(t), apply_transform(t, b)) == b

    def test_hflip_needs_width(self):
        with pytest.raises(ConfigError):
            BoxTransform("hflip")

    def test_identity(self):
        b = BBox(1, 2, 3, 4)
        assert apply_transform(BoxTransform(), b) is b


def test_boxes_array():
    arr = boxes_array([lb(1, 2, 3, 4), BBox(5, 6, 7, 8)])
    np.testing.assert_array_equal(arr, [[1, 2, 3, 4], [5, 6, 7, 8]])
    assert boxes_array([]).shape == (0, 4)
