"""Scoring detections against ground truth: per-class AP, mAP, IoU sweeps.

A ranked detection is a true positive when it overlaps a not-yet-matched
ground truth of its class in the same frame at IoU >= the threshold; each
ground truth is matched at most once and duplicate hits count as false
positives.  AP is the area under the all-point interpolated precision-recall
curve; mAP averages AP over the classes present in the ground truth.  Only
moving objects belong in the ground truth -- non-movers are background by the
task definition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import CLASSES, ClassLabel, MovingObjectInstance
from .errors import EvaluationError
from .geometry import iou
from .infer import Detection

DEFAULT_IOU_THRESHOLDS = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)


@dataclass(frozen=True)
class PRCurve:
    recalls: np.ndarray
    precisions: np.ndarray
    class_name: str
    iou_threshold: float

    def __post_init__(self):
        r = np.asarray(self.recalls)
        p = np.asarray(self.precisions)
        if r.shape != p.shape:
            raise ValueError("recall/precision arrays must align")
        if r.size and (np.any(np.diff(r) < 0) or np.any(p < 0) or np.any(p > 1)):
            raise ValueError("recall must be non-decreasing and precision in [0, 1]")


@dataclass(frozen=True)
class EvalReport:
    per_class_ap: dict[str, float]
    map_value: float
    iou_threshold: float
    classes_absent: tuple[str, ...] = ()
    n_detections: int = 0
    n_ground_truth: int = 0
    per_video: dict[str, float] = field(default_factory=dict)


def _rank_detections(dets: list[Detection]) -> list[Detection]:
    # Stable sort keeps insertion order among equal scores -> deterministic.
    return sorted(dets, key=lambda d: -d.score)


def match_ranked_detections(
    dets: list[Detection],
    gts: list[MovingObjectInstance],
    iou_threshold: float,
) -> np.ndarray:
    """True-positive flags for score-ranked detections of a single class."""
    matched: set[int] = set()
    gt_by_frame: dict[int, list[int]] = {}
    for j, g in enumerate(gts):
        gt_by_frame.setdefault(g.frame_index, []).append(j)
    tp = np.zeros(len(dets), dtype=bool)
    for i, det in enumerate(_rank_detections(dets)):
        best_iou = 0.0
        best_j = -1
        for j in gt_by_frame.get(det.frame_index, ()):
            if j in matched:
                continue
            ov = iou(det.box, gts[j].box)
            if ov > best_iou:
                best_iou = ov
                best_j = j
        if best_j >= 0 and best_iou >= iou_threshold:
            tp[i] = True
            matched.add(best_j)
    return tp


def _ap_from_pr(recalls: np.ndarray, precisions: np.ndarray) -> float:
    """Area under the all-point interpolated PR curve."""
    mrec = np.concatenate([[0.0], recalls, [1.0]])
    mpre = np.concatenate([[0.0], precisions, [0.0]])
    for i in range(mpre.size - 1, 0, -1):
        mpre[i - 1] = max(mpre[i - 1], mpre[i])
    idx = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def average_precision(
    detections: list[Detection],
    ground_truth: list[MovingObjectInstance],
    iou_threshold: float,
    class_label: ClassLabel,
) -> tuple[float, PRCurve]:
    """AP for one class over a pooled set of frames."""
    if class_label not in CLASSES:
        raise EvaluationError(f"unknown class {class_label!r}")
    gts = [g for g in ground_truth if g.label == class_label]
    dets = _rank_detections([d for d in detections if d.label == class_label])
    if not gts:
        raise EvaluationError(f"no ground truth for class {class_label.name}")
    if not dets:
        empty = np.zeros(0)
        return 0.0, PRCurve(empty, empty, class_label.name, iou_threshold)
    tp = match_ranked_detections(dets, gts, iou_threshold)
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(~tp)
    recalls = tp_cum / len(gts)
    precisions = tp_cum / np.maximum(tp_cum + fp_cum, 1)
    ap = _ap_from_pr(recalls, precisions)
    return ap, PRCurve(recalls, precisions, class_label.name, iou_threshold)


def map_at_iou(
    detections: list[Detection],
    ground_truth: list[MovingObjectInstance],
    iou_threshold: float,
) -> EvalReport:
    """Mean AP over the classes present in the ground truth."""
    if not ground_truth:
        raise EvaluationError("mAP is undefined for empty ground truth")
    per_class = {}
    absent = []
    for cls in CLASSES:
        if any(g.label == cls for g in ground_truth):
            ap, _ = average_precision(detections, ground_truth, iou_threshold, cls)
            per_class[cls.name] = ap
        else:
            absent.append(cls.name)
    return EvalReport(
        per_class_ap=per_class,
        map_value=float(np.mean(list(per_class.values()))),
        iou_threshold=iou_threshold,
        classes_absent=tuple(absent),
        n_detections=len(detections),
        n_ground_truth=len(ground_truth),
    )


def iou_sweep(
    detections: list[Detection],
    ground_truth: list[MovingObjectInstance],
    thresholds=DEFAULT_IOU_THRESHOLDS,
) -> list[EvalReport]:
    """One report per IoU threshold (the threshold-vs-mAP series)."""
    return [map_at_iou(detections, ground_truth, t) for t in thresholds]


def evaluate_per_video(
    detections_by_video: dict[str, list[Detection]],
    ground_truth_by_video: dict[str, list[MovingObjectInstance]],
    iou_threshold: float = 0.5,
) -> EvalReport:
    """Independent per-video mAP plus their unweighted mean.

    Videos whose ground truth is empty are skipped (mAP is undefined there).
    """
    per_video = {}
    all_aps: dict[str, list[float]] = {}
    absent: set[str] = set()
    n_det = n_gt = 0
    for name in sorted(ground_truth_by_video):
        gts = ground_truth_by_video[name]
        dets = detections_by_video.get(name, [])
        if not gts:
            continue
        report = map_at_iou(dets, gts, iou_threshold)
        per_video[name] = report.map_value
        n_det += len(dets)
        n_gt += len(gts)
        for cname, ap in report.per_class_ap.items():
            all_aps.setdefault(cname, []).append(ap)
        absent.update(report.classes_absent)
    if not per_video:
        raise EvaluationError("no video has ground truth")
    return EvalReport(
        per_class_ap={c: float(np.mean(v)) for c, v in all_aps.items()},
        map_value=float(np.mean(list(per_video.values()))),
        iou_threshold=iou_threshold,
        classes_absent=tuple(sorted(absent - set(all_aps))),
        n_detections=n_det,
        n_ground_truth=n_gt,
        per_video=per_video,
    )


def filter_in_frame(
    detections: list[Detection], frame_size: tuple[int, int]
) -> tuple[list[Detection], int]:
    """Drop detections whose box lies fully outside the frame."""
    fh, fw = frame_size
    kept = [
        d
        for d in detections
        if d.box.x2 > 0 and d.box.y2 > 0 and d.box.x1 < fw and d.box.y1 < fh
    ]
    return kept, len(detections) - len(kept)


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------


def report_table_text(reports: list[EvalReport]) -> str:
    lines = ["iou_threshold  " + "  ".join(f"{c.name:>14s}" for c in CLASSES) + "      mAP"]
    for r in reports:
        cells = []
        for c in CLASSES:
            ap = r.per_class_ap.get(c.name)
            cells.append(f"{ap:14.4f}" if ap is not None else f"{'absent':>14s}")
        lines.append(f"{r.iou_threshold:13.2f}  " + "  ".join(cells) + f"  {r.map_value:7.4f}")
    return "\n".join(lines) + "\n"


def report_csv(reports: list[EvalReport]) -> str:
    header = ["iou_threshold"] + [c.name for c in CLASSES] + ["map"]
    rows = [",".join(header)]
    for r in reports:
        cells = [f"{r.iou_threshold:g}"]
        for c in CLASSES:
            ap = r.per_class_ap.get(c.name)
            cells.append(f"{ap:.6f}" if ap is not None else "")
        cells.append(f"{r.map_value:.6f}")
        rows.append(",".join(cells))
    return "\n".join(rows) + "\n"


def sweep_plot_data(reports: list[EvalReport]) -> str:
    """Two-column threshold/mAP series for external plotting."""
    return "".join(f"{r.iou_threshold:g} {r.map_value:.6f}\n" for r in reports)


def per_video_table_text(report: EvalReport) -> str:
    lines = [f"{'video':<20s} mAP@{report.iou_threshold:g}"]
    for name, value in report.per_video.items():
        lines.append(f"{name:<20s} {value * 100:6.2f}")
    lines.append(f"{'Avg':<20s} {report.map_value * 100:6.2f}")
    return "\n".join(lines) + "\n"
