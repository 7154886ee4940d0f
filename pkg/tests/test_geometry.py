import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from movrec.geometry import BoundingBox, iou, iou_matrix


def rasterized_iou(a: BoundingBox, b: BoundingBox, cell: float = 0.005) -> float:
    """Independent oracle: count sub-pixel cells inside each half-open box."""
    x_lo = min(a.x1, b.x1)
    x_hi = max(a.x2, b.x2)
    y_lo = min(a.y1, b.y1)
    y_hi = max(a.y2, b.y2)
    xs = np.arange(x_lo + cell / 2, x_hi, cell)
    ys = np.arange(y_lo + cell / 2, y_hi, cell)
    gx, gy = np.meshgrid(xs, ys)

    def inside(box):
        return (gx >= box.x1) & (gx < box.x2) & (gy >= box.y1) & (gy < box.y2)

    in_a = inside(a)
    in_b = inside(b)
    union = np.count_nonzero(in_a | in_b)
    return np.count_nonzero(in_a & in_b) / union


boxes = st.builds(
    lambda x, y, w, h: BoundingBox(x, y, x + w, y + h),
    st.floats(0, 100),
    st.floats(0, 100),
    st.floats(0.5, 60),
    st.floats(0.5, 60),
)


class TestBoundingBox:
    def test_rejects_non_positive_extent(self):
        with pytest.raises(ValueError):
            BoundingBox(100, 50, 90, 90)
        with pytest.raises(ValueError):
            BoundingBox(0, 0, 10, 0)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            BoundingBox(0, 0, float("nan"), 10)
        with pytest.raises(ValueError):
            BoundingBox(0, 0, float("inf"), 10)

    def test_half_open_area(self):
        assert BoundingBox(0, 0, 10, 20).area == 200.0

    def test_clip(self):
        assert BoundingBox(-5, -5, 10, 10).clip(8, 8) == BoundingBox(0, 0, 8, 8)
        assert BoundingBox(20, 20, 30, 30).clip(8, 8) is None


class TestIoU:
    def test_identical(self):
        b = BoundingBox(3, 4, 10, 12)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(BoundingBox(0, 0, 1, 1), BoundingBox(5, 5, 6, 6)) == 0.0

    def test_quarter_overlap_case(self):
        a = BoundingBox(0, 0, 2, 2)
        b = BoundingBox(1, 1, 3, 3)
        assert iou(a, b) == pytest.approx(1 / 7, abs=1e-12)
        assert iou(a, b) == pytest.approx(rasterized_iou(a, b), abs=2e-3)

    def test_matches_rasterized_oracle(self, rng):
        for _ in range(25):
            x1, y1 = rng.integers(0, 20, 2)
            a = BoundingBox(float(x1), float(y1), float(x1 + rng.integers(1, 15)), float(y1 + rng.integers(1, 15)))
            x2, y2 = rng.integers(0, 20, 2)
            b = BoundingBox(float(x2), float(y2), float(x2 + rng.integers(1, 15)), float(y2 + rng.integers(1, 15)))
            assert iou(a, b) == pytest.approx(rasterized_iou(a, b, cell=0.02), abs=5e-3)

    @given(a=boxes, b=boxes)
    @settings(max_examples=200, deadline=None)
    def test_symmetric_and_bounded(self, a, b):
        ab = iou(a, b)
        assert ab == iou(b, a)
        assert 0.0 <= ab <= 1.0

    @given(a=boxes)
    @settings(max_examples=100, deadline=None)
    def test_self_iou_is_one(self, a):
        assert iou(a, a) == pytest.approx(1.0, abs=1e-12)


class TestIoUMatrix:
    def test_matches_scalar(self, rng):
        def random_boxes(n):
            xy = rng.uniform(0, 50, (n, 2))
            wh = rng.uniform(1, 30, (n, 2))
            return np.concatenate([xy, xy + wh], axis=1)

        a = random_boxes(12)
        b = random_boxes(7)
        mat = iou_matrix(a, b)
        for i in range(12):
            for j in range(7):
                expected = iou(BoundingBox(*a[i]), BoundingBox(*b[j]))
                assert mat[i, j] == pytest.approx(expected, abs=1e-12)

    def test_empty(self):
        assert iou_matrix(np.zeros((0, 4)), np.zeros((3, 4))).shape == (0, 3)
