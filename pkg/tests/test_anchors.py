import numpy as np
import pytest

from movrec.model.anchors import (
    AnchorConfig,
    center_to_corner,
    corner_to_center,
    decode_boxes,
    encode_boxes,
    generate_anchors,
    level_grid_size,
)


class TestGrid:
    def test_level_sizes_608(self):
        grid = generate_anchors((608, 608))
        assert grid.level_sizes == ((76, 76), (38, 38), (19, 19), (10, 10), (5, 5))

    def test_level_sizes_odd_input(self):
        # repeated ceil-halving, not floor division
        assert level_grid_size((607, 601), 8) == (76, 76)
        assert level_grid_size((607, 601), 128) == (5, 5)

    def test_counts(self):
        grid = generate_anchors((256, 256))
        per_cell = grid.config.anchors_per_cell
        assert per_cell == 9
        expected = [h * w * per_cell for h, w in grid.level_sizes]
        assert list(grid.level_counts) == expected
        assert grid.total == sum(expected)
        assert grid.centers.shape == (grid.total, 4)

    def test_anchor_areas_and_ratios(self):
        cfg = AnchorConfig()
        grid = generate_anchors((64, 64), cfg)
        first_cell = grid.per_level[0][: cfg.anchors_per_cell]
        w, h = first_cell[:, 2], first_cell[:, 3]
        # all P3 anchors carry one of three areas derived from base 32
        areas = sorted(set(np.round(w * h, 3)))
        expected = sorted(round((32 * s) ** 2, 3) for s in cfg.scales)
        assert areas == pytest.approx(expected)
        ratios = sorted(set(np.round(h / w, 6)))
        assert ratios == pytest.approx([0.5, 1.0, 2.0])

    def test_base_doubles_per_level(self):
        grid = generate_anchors((256, 256))
        for li in range(1, 5):
            a0 = grid.per_level[0][0]
            al = grid.per_level[li][0]
            assert al[2] == pytest.approx(a0[2] * 2**li)

    def test_centers_on_stride_grid(self):
        grid = generate_anchors((64, 64))
        p3 = grid.per_level[0]
        assert p3[0, 0] == 4.0 and p3[0, 1] == 4.0  # (0.5 * stride 8)
        assert p3[9, 0] == 12.0  # next cell to the right


class TestConversions:
    def test_round_trip(self, rng):
        c = np.concatenate([rng.uniform(0, 100, (50, 2)), rng.uniform(1, 40, (50, 2))], axis=1)
        back = corner_to_center(center_to_corner(c))
        np.testing.assert_allclose(back, c, atol=1e-12)


class TestEncodeDecode:
    def test_identity_box_gives_zero_deltas(self):
        anchors = np.array([[50.0, 60.0, 32.0, 16.0]])
        boxes = center_to_corner(anchors)
        deltas = encode_boxes(boxes, anchors)
        np.testing.assert_allclose(deltas, 0.0, atol=1e-12)

    def test_round_trip_1000_random(self, rng):
        n = 1000
        anchors = np.concatenate(
            [rng.uniform(0, 600, (n, 2)), rng.uniform(4, 256, (n, 2))], axis=1
        )
        boxes_c = np.concatenate(
            [rng.uniform(0, 600, (n, 2)), rng.uniform(1, 300, (n, 2))], axis=1
        )
        boxes = center_to_corner(boxes_c)
        decoded = decode_boxes(encode_boxes(boxes, anchors), anchors)
        assert np.abs(decoded - boxes).max() < 1e-4

    def test_log2_closed_form(self):
        # unit variances: deltas (0, 0, log 2, log 2) double both extents
        anchors = np.array([[100.0, 100.0, 32.0, 32.0]])
        deltas = np.array([[0.0, 0.0, np.log(2), np.log(2)]])
        out = decode_boxes(deltas, anchors, variances=(1, 1, 1, 1))
        np.testing.assert_allclose(out, [[68.0, 68.0, 132.0, 132.0]], atol=1e-9)

    def test_decode_clips_to_frame(self):
        anchors = np.array([[5.0, 5.0, 32.0, 32.0]])
        out = decode_boxes(np.zeros((1, 4)), anchors, clip_to=(100, 100))
        np.testing.assert_allclose(out, [[0.0, 0.0, 21.0, 21.0]])

    def test_non_finite_deltas_rejected(self):
        anchors = np.array([[5.0, 5.0, 32.0, 32.0]])
        with pytest.raises(ValueError):
            decode_boxes(np.array([[0.0, np.nan, 0.0, 0.0]]), anchors)

    def test_degenerate_anchor_rejected(self):
        with pytest.raises(ValueError):
            encode_boxes(np.array([[0, 0, 10, 10.0]]), np.array([[5.0, 5.0, 0.0, 10.0]]))


class TestAnchorConfig:
    def test_small_object_base(self):
        grid = generate_anchors((256, 256), AnchorConfig(base_size=16))
        assert grid.per_level[0][0, 2] == pytest.approx(16 / np.sqrt(0.5))

    def test_validation(self):
        with pytest.raises(ValueError):
            AnchorConfig(base_size=0)
