import math

import numpy as np
import pytest
import torch

from movrec.geometry import iou_matrix
from movrec.losses import IGNORE, NEGATIVE, assign_anchors, focal_loss, smooth_l1


def logit(p: float) -> float:
    return math.log(p / (1 - p))


class TestFocalLoss:
    def test_reduces_to_cross_entropy(self):
        # gamma=0, no alpha weighting, single positive at p=0.5 -> ln 2
        logits = torch.zeros((1, 1), dtype=torch.float64)
        targets = torch.tensor([0])
        loss = focal_loss(logits, targets, alpha=None, gamma=0.0)
        assert float(loss) == pytest.approx(math.log(2), abs=1e-12)

    def test_closed_form_value(self):
        # y=1, p=0.9, alpha=0.25, gamma=2 -> 0.25 * 0.01 * (-ln 0.9)
        logits = torch.tensor([[logit(0.9)]], dtype=torch.float64)
        targets = torch.tensor([0])
        loss = focal_loss(logits, targets, alpha=0.25, gamma=2.0)
        expected = 0.25 * (0.1**2) * (-math.log(0.9))
        assert float(loss) == pytest.approx(expected, abs=1e-8)
        assert float(loss) == pytest.approx(2.634e-4, abs=1e-6)

    def test_confident_correct_goes_to_zero(self):
        logits = torch.full((4, 2), -30.0, dtype=torch.float64)
        logits[:, 1] = 30.0
        targets = torch.full((4,), 1)
        loss = focal_loss(logits, targets, alpha=0.25, gamma=2.0)
        assert float(loss) < 1e-8

    def test_negative_anchor_contribution(self):
        # one negative anchor, K=1, p=0.5: (1-alpha) * 0.25 * ln 2
        logits = torch.zeros((1, 1), dtype=torch.float64)
        targets = torch.tensor([NEGATIVE])
        loss = focal_loss(logits, targets, alpha=0.25, gamma=2.0)
        assert float(loss) == pytest.approx(0.75 * 0.25 * math.log(2), abs=1e-12)

    def test_ignored_anchors_contribute_nothing(self):
        logits = torch.randn((8, 2), dtype=torch.float64)
        targets = torch.full((8,), IGNORE)
        loss = focal_loss(logits, targets)
        assert float(loss) == 0.0

    def test_ignored_gradients_vanish(self):
        logits = torch.randn((8, 2), dtype=torch.float64, requires_grad=True)
        targets = torch.full((8,), IGNORE)
        focal_loss(logits, targets).backward()
        assert torch.all(logits.grad == 0)

    def test_normalized_by_positive_count(self):
        logits = torch.zeros((4, 1), dtype=torch.float64)
        targets = torch.tensor([0, 0, 0, 0])
        loss = focal_loss(logits, targets, alpha=None, gamma=0.0)
        assert float(loss) == pytest.approx(math.log(2), abs=1e-12)

    def test_monotone_decreasing_in_pt(self):
        ps = np.linspace(0.02, 0.98, 49)
        losses = []
        for p in ps:
            logits = torch.tensor([[logit(p)]], dtype=torch.float64)
            losses.append(float(focal_loss(logits, torch.tensor([0]), 0.25, 2.0)))
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_nan_logits_rejected(self):
        logits = torch.tensor([[float("nan"), 0.0]])
        with pytest.raises(ValueError):
            focal_loss(logits, torch.tensor([0]))

    def test_gradient_matches_finite_differences(self, rng):
        logits = torch.tensor(rng.normal(0, 2, (6, 2)), dtype=torch.float64, requires_grad=True)
        targets = torch.tensor([0, 1, NEGATIVE, IGNORE, 1, NEGATIVE])
        loss = focal_loss(logits, targets, 0.25, 2.0)
        loss.backward()
        eps = 1e-6
        for i in range(6):
            for j in range(2):
                with torch.no_grad():
                    lp = logits.clone()
                    lp[i, j] += eps
                    lm = logits.clone()
                    lm[i, j] -= eps
                    fd = (
                        float(focal_loss(lp, targets, 0.25, 2.0))
                        - float(focal_loss(lm, targets, 0.25, 2.0))
                    ) / (2 * eps)
                grad = float(logits.grad[i, j])
                assert grad == pytest.approx(fd, rel=1e-4, abs=1e-9)


class TestSmoothL1:
    def test_zero(self):
        x = torch.zeros((1, 1), dtype=torch.float64)
        assert float(smooth_l1(x, x)) == 0.0

    def test_quadratic_region(self):
        pred = torch.tensor([[0.5]], dtype=torch.float64)
        target = torch.zeros_like(pred)
        assert float(smooth_l1(pred, target, beta=1.0)) == pytest.approx(0.125, abs=1e-12)

    def test_linear_region(self):
        pred = torch.tensor([[2.0]], dtype=torch.float64)
        target = torch.zeros_like(pred)
        assert float(smooth_l1(pred, target, beta=1.0)) == pytest.approx(1.5, abs=1e-12)

    def test_mean_over_anchors_sums_coordinates(self):
        pred = torch.tensor([[0.5, 0.5, 0.0, 0.0], [2.0, 0.0, 0.0, 0.0]], dtype=torch.float64)
        target = torch.zeros_like(pred)
        assert float(smooth_l1(pred, target)) == pytest.approx((0.25 + 1.5) / 2, abs=1e-12)

    def test_empty_input(self):
        empty = torch.zeros((0, 4))
        assert float(smooth_l1(empty, empty)) == 0.0

    def test_continuous_and_smooth_at_beta(self):
        beta = 1.0
        eps = 1e-7

        def f(x):
            return float(
                smooth_l1(
                    torch.tensor([[x]], dtype=torch.float64),
                    torch.zeros((1, 1), dtype=torch.float64),
                    beta,
                )
            )

        assert f(beta - eps) == pytest.approx(f(beta + eps), abs=1e-6)
        d_left = (f(beta) - f(beta - eps)) / eps
        d_right = (f(beta + eps) - f(beta)) / eps
        assert d_left == pytest.approx(d_right, abs=1e-6)

    def test_beta_validation(self):
        x = torch.zeros((1, 1))
        with pytest.raises(ValueError):
            smooth_l1(x, x, beta=0.0)

    def test_gradient_matches_finite_differences(self, rng):
        pred = torch.tensor(rng.normal(0, 2, (5, 4)), dtype=torch.float64, requires_grad=True)
        target = torch.tensor(rng.normal(0, 2, (5, 4)), dtype=torch.float64)
        smooth_l1(pred, target).backward()
        eps = 1e-6
        for i in range(5):
            for j in range(4):
                with torch.no_grad():
                    pp = pred.clone()
                    pp[i, j] += eps
                    pm = pred.clone()
                    pm[i, j] -= eps
                    fd = (float(smooth_l1(pp, target)) - float(smooth_l1(pm, target))) / (2 * eps)
                assert float(pred.grad[i, j]) == pytest.approx(fd, rel=1e-4, abs=1e-9)


def brute_force_assignment(anchors, gt_boxes, gt_class_ids, pos_iou, neg_iou):
    """Direct per-anchor loops mirroring the stated policy."""
    n, m = len(anchors), len(gt_boxes)
    labels = np.full(n, NEGATIVE, dtype=np.int64)
    matched = np.full(n, -1, dtype=np.int64)
    if m == 0:
        return labels, matched
    overlaps = iou_matrix(anchors, gt_boxes)
    for i in range(n):
        best_j = int(np.argmax(overlaps[i]))
        best = overlaps[i, best_j]
        if best >= pos_iou:
            labels[i] = gt_class_ids[best_j]
            matched[i] = best_j
        elif best >= neg_iou:
            labels[i] = IGNORE
    for j in range(m):
        if not np.any(matched == j):
            i = int(np.argmax(overlaps[:, j]))
            labels[i] = gt_class_ids[j]
            matched[i] = j
    return labels, matched


def random_boxes(rng, n, span=100, max_side=40):
    xy = rng.uniform(0, span, (n, 2))
    wh = rng.uniform(2, max_side, (n, 2))
    return np.concatenate([xy, xy + wh], axis=1)


class TestAssignment:
    def test_exact_anchor_is_positive(self):
        anchors = np.array([[10.0, 10.0, 42.0, 42.0], [100.0, 100.0, 140.0, 140.0]])
        gt = anchors[:1]
        out = assign_anchors(anchors, gt, np.array([1]))
        assert out.class_targets[0] == 1
        assert out.matched_gt[0] == 0
        assert out.class_targets[1] == NEGATIVE

    def test_empty_gt_all_negative(self):
        anchors = np.array([[0.0, 0.0, 10.0, 10.0]])
        out = assign_anchors(anchors, np.zeros((0, 4)), np.zeros(0, dtype=np.int64))
        assert np.all(out.class_targets == NEGATIVE)
        assert out.num_positive == 0

    def test_rescue_claims_best_anchor(self):
        anchors = np.array([[0.0, 0.0, 10.0, 10.0], [50.0, 50.0, 60.0, 60.0]])
        gt = np.array([[52.0, 52.0, 70.0, 70.0]])  # IoU with anchor 1 below 0.5
        out = assign_anchors(anchors, gt, np.array([0]))
        assert out.class_targets[1] == 0
        assert out.matched_gt[1] == 0

    def test_threshold_validation(self):
        anchors = np.array([[0.0, 0.0, 10.0, 10.0]])
        with pytest.raises(ValueError):
            assign_anchors(anchors, np.zeros((0, 4)), np.zeros(0), pos_iou=0.3, neg_iou=0.4)

    def test_matches_brute_force(self, rng):
        for _ in range(60):
            anchors = random_boxes(rng, 100)
            m = int(rng.integers(0, 4))
            gt = random_boxes(rng, m)
            cls = rng.integers(0, 2, m)
            out = assign_anchors(anchors, gt, cls)
            labels, matched = brute_force_assignment(anchors, gt, cls, 0.5, 0.4)
            np.testing.assert_array_equal(out.class_targets, labels)
            np.testing.assert_array_equal(out.matched_gt, matched)
