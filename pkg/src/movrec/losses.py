"""Detection losses and anchor-to-ground-truth assignment.

Target convention for per-anchor class targets:

* ``>= 0``  positive, value is the class id
* ``-1``    negative (background)
* ``-2``    ignored (contributes to no loss)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .geometry import iou_matrix

NEGATIVE = -1
IGNORE = -2


def focal_loss(
    class_logits: torch.Tensor,
    targets: torch.Tensor,
    alpha: float | None = 0.25,
    gamma: float = 2.0,
) -> torch.Tensor:
    """Sigmoid focal loss, normalized by the number of positive anchors.

    ``class_logits`` is (N, K); ``targets`` is (N,) with the convention above.
    FL(p_t) = -alpha_t (1 - p_t)^gamma log(p_t), summed over the K sigmoid
    components of every non-ignored anchor; ``alpha=None`` drops the class
    balancing term (alpha_t = 1).
    """
    if class_logits.ndim != 2:
        raise ValueError(f"expected (N, K) logits, got {tuple(class_logits.shape)}")
    if torch.isnan(class_logits).any():
        raise ValueError("NaN in class logits")
    targets = targets.to(class_logits.device)
    keep = targets != IGNORE
    logits = class_logits[keep]
    kept_targets = targets[keep]
    onehot = torch.zeros_like(logits)
    pos = kept_targets >= 0
    if pos.any():
        onehot[pos, kept_targets[pos].long()] = 1.0

    p = torch.sigmoid(logits)
    ce = torch.nn.functional.binary_cross_entropy_with_logits(
        logits, onehot, reduction="none"
    )
    p_t = p * onehot + (1.0 - p) * (1.0 - onehot)
    loss = ce * (1.0 - p_t) ** gamma
    if alpha is not None:
        alpha_t = alpha * onehot + (1.0 - alpha) * (1.0 - onehot)
        loss = alpha_t * loss
    num_pos = pos.sum().clamp(min=1).to(loss.dtype)
    return loss.sum() / num_pos


def smooth_l1(
    pred: torch.Tensor,
    target: torch.Tensor,
    beta: float = 1.0,
) -> torch.Tensor:
    """Smooth-L1 over positive-anchor regression rows.

    Per coordinate: 0.5 x^2 / beta for |x| < beta, else |x| - 0.5 beta;
    coordinates are summed per anchor and the result is averaged over the
    anchors.  Empty input gives 0.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if pred.numel() == 0:
        return pred.sum() * 0.0
    diff = torch.abs(pred - target)
    per_elem = torch.where(diff < beta, 0.5 * diff * diff / beta, diff - 0.5 * beta)
    per_anchor = per_elem.reshape(per_elem.shape[0], -1).sum(dim=1)
    return per_anchor.mean()


@dataclass(frozen=True)
class AnchorAssignment:
    """Per-anchor targets produced by the max-IoU policy."""

    class_targets: np.ndarray  # (N,) int64, convention above
    matched_gt: np.ndarray  # (N,) int64, gt index for positives else -1

    @property
    def num_positive(self) -> int:
        return int((self.class_targets >= 0).sum())


def assign_anchors(
    anchors: np.ndarray,
    gt_boxes: np.ndarray,
    gt_class_ids: np.ndarray,
    pos_iou: float = 0.5,
    neg_iou: float = 0.4,
) -> AnchorAssignment:
    """Max-IoU assignment with best-anchor rescue.

    An anchor is positive for its best-overlapping ground truth when that IoU
    is >= ``pos_iou``, negative below ``neg_iou``, ignored in between.  Any
    ground truth left without a positive anchor then claims its single
    best-IoU anchor, which matters for objects only a few pixels wide.
    """
    if not (0.0 <= neg_iou <= pos_iou <= 1.0):
        raise ValueError(f"need 0 <= neg_iou <= pos_iou <= 1, got {neg_iou}, {pos_iou}")
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    n = anchors.shape[0]
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    gt_class_ids = np.asarray(gt_class_ids, dtype=np.int64).reshape(-1)
    class_targets = np.full(n, NEGATIVE, dtype=np.int64)
    matched = np.full(n, -1, dtype=np.int64)
    if gt_boxes.shape[0] == 0:
        return AnchorAssignment(class_targets, matched)

    overlaps = iou_matrix(anchors, gt_boxes)  # (N, M)
    best_gt = overlaps.argmax(axis=1)
    best_iou = overlaps[np.arange(n), best_gt]

    class_targets[(best_iou >= neg_iou) & (best_iou < pos_iou)] = IGNORE
    pos_mask = best_iou >= pos_iou
    class_targets[pos_mask] = gt_class_ids[best_gt[pos_mask]]
    matched[pos_mask] = best_gt[pos_mask]

    # Rescue: ground truths not claimed by any anchor take their best one.
    for j in range(gt_boxes.shape[0]):
        if not np.any(matched == j):
            i = int(overlaps[:, j].argmax())
            class_targets[i] = gt_class_ids[j]
            matched[i] = j
    return AnchorAssignment(class_targets, matched)
