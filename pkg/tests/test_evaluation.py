import numpy as np
import pytest

from movrec.data import CAR, CLASSES, HEAVY_VEHICLE, MovingObjectInstance
from movrec.errors import EvaluationError
from movrec.evaluate import (
    DEFAULT_IOU_THRESHOLDS,
    average_precision,
    evaluate_per_video,
    filter_in_frame,
    iou_sweep,
    map_at_iou,
    per_video_table_text,
    report_csv,
    report_table_text,
    sweep_plot_data,
)
from movrec.geometry import BoundingBox, iou
from movrec.infer import Detection


def brute_force_ap(detections, ground_truth, iou_threshold, class_label):
    """From-first-principles scorer: explicit ranking loop and PR integration."""
    dets = [d for d in detections if d.label == class_label]
    gts = [(g.frame_index, g.box) for g in ground_truth if g.label == class_label]
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    taken = [False] * len(gts)
    flags = []
    for i in order:
        det = dets[i]
        best, best_j = 0.0, -1
        for j, (fidx, gbox) in enumerate(gts):
            if taken[j] or fidx != det.frame_index:
                continue
            ov = iou(det.box, gbox)
            if ov > best:
                best, best_j = ov, j
        if best_j >= 0 and best >= iou_threshold:
            taken[best_j] = True
            flags.append(True)
        else:
            flags.append(False)
    # all-point interpolation: AP = sum over TP ranks of delta-recall * best
    # precision at any rank >= that recall level
    n_gt = len(gts)
    precisions, recalls = [], []
    tp = 0
    for k, is_tp in enumerate(flags, start=1):
        tp += is_tp
        precisions.append(tp / k)
        recalls.append(tp / n_gt)
    ap = 0.0
    prev_r = 0.0
    for k in range(len(flags)):
        if k + 1 < len(flags) and recalls[k + 1] == recalls[k]:
            pass
        if flags[k]:
            r = recalls[k]
            p_right = max(precisions[k:])
            ap += (r - prev_r) * p_right
            prev_r = r
    return ap


def det(x, y, w, h, score, label=CAR, frame=0):
    return Detection(BoundingBox(x, y, x + w, y + h), label, score, frame)


def gt(x, y, w, h, label=CAR, frame=0):
    return MovingObjectInstance(BoundingBox(x, y, x + w, y + h), label, frame)


def random_scene(rng, n_frames=4, max_gt=6, max_det=12):
    gts, dets = [], []
    for f in range(n_frames):
        boxes = []
        for _ in range(int(rng.integers(0, max_gt))):
            x, y = rng.uniform(0, 80, 2)
            w, h = rng.uniform(5, 30, 2)
            label = CLASSES[int(rng.integers(0, 2))]
            gts.append(gt(x, y, w, h, label, f))
            boxes.append((x, y, w, h, label))
        for _ in range(int(rng.integers(0, max_det))):
            if boxes and rng.random() < 0.6:
                x, y, w, h, label = boxes[int(rng.integers(0, len(boxes)))]
                x += rng.normal(0, 4)
                y += rng.normal(0, 4)
            else:
                x, y = rng.uniform(0, 80, 2)
                w, h = rng.uniform(5, 30, 2)
                label = CLASSES[int(rng.integers(0, 2))]
            dets.append(det(x, y, w, h, float(rng.uniform(0.05, 1)), label, f))
    return dets, gts


class TestAveragePrecision:
    def test_perfect_detector(self):
        gts = [gt(10, 10, 20, 20, CAR, f) for f in range(5)]
        dets = [det(10, 10, 20, 20, 1.0, CAR, f) for f in range(5)]
        ap, curve = average_precision(dets, gts, 0.5, CAR)
        assert ap == 1.0
        assert curve.recalls[-1] == 1.0

    def test_no_detections(self):
        gts = [gt(10, 10, 20, 20)]
        ap, _ = average_precision([], gts, 0.5, CAR)
        assert ap == 0.0

    def test_crafted_five_dets_three_gts(self):
        gts = [gt(0, 0, 10, 10), gt(20, 20, 10, 10), gt(40, 40, 10, 10)]
        dets = [
            det(0, 0, 10, 10, 0.95),        # TP
            det(20.5, 20, 10, 10, 0.9),     # TP (high IoU)
            det(70, 70, 5, 5, 0.85),        # FP
            det(0, 0, 10, 10, 0.8),         # duplicate -> FP
            det(40, 41, 10, 10, 0.6),       # TP
        ]
        ap, _ = average_precision(dets, gts, 0.5, CAR)
        expected = brute_force_ap(dets, gts, 0.5, CAR)
        assert ap == pytest.approx(expected, abs=1e-12)
        # rank-by-rank: precisions 1, 1, 2/3, 2/4, 3/5 at recalls 1/3, 2/3, 3/3
        assert ap == pytest.approx(1 / 3 + 1 / 3 + (3 / 5) / 3, abs=1e-12)

    def test_matches_brute_force_random(self, rng):
        for _ in range(50):
            dets, gts = random_scene(rng)
            if not any(g.label == CAR for g in gts):
                continue
            ap, _ = average_precision(dets, gts, 0.5, CAR)
            assert ap == pytest.approx(brute_force_ap(dets, gts, 0.5, CAR), abs=1e-12)

    def test_score_rank_invariance(self, rng):
        dets, gts = random_scene(rng)
        gts.append(gt(5, 5, 10, 10))
        ap1, _ = average_precision(dets, gts, 0.5, CAR)
        monotone = [
            Detection(d.box, d.label, 0.1 + 0.9 * d.score**3, d.frame_index) for d in dets
        ]
        ap2, _ = average_precision(monotone, gts, 0.5, CAR)
        assert ap1 == pytest.approx(ap2, abs=1e-12)

    def test_appending_match_never_decreases_ap(self, rng):
        for _ in range(20):
            dets, gts = random_scene(rng)
            car_gts = [g for g in gts if g.label == CAR]
            if not car_gts:
                continue
            ap1, _ = average_precision(dets, gts, 0.5, CAR)
            min_score = min((d.score for d in dets if d.label == CAR), default=0.5)
            target = car_gts[0]
            extra = Detection(target.box, CAR, min_score / 2, target.frame_index)
            ap2, _ = average_precision(dets + [extra], gts, 0.5, CAR)
            assert ap2 >= ap1 - 1e-12

    def test_unknown_class(self):
        from movrec.data import ClassLabel

        with pytest.raises(EvaluationError):
            average_precision([], [gt(0, 0, 5, 5)], 0.5, ClassLabel(7, "bus"))

    def test_each_gt_matched_once(self):
        gts = [gt(0, 0, 10, 10)]
        dets = [det(0, 0, 10, 10, 0.9), det(0, 0, 10, 10, 0.8)]
        ap, curve = average_precision(dets, gts, 0.5, CAR)
        assert curve.recalls[-1] == 1.0
        assert curve.precisions[-1] == 0.5  # second hit is a false positive


class TestMapAtIoU:
    def test_two_class_mean(self):
        gts = [gt(0, 0, 10, 10, CAR), gt(30, 30, 10, 10, HEAVY_VEHICLE)]
        dets = [det(0, 0, 10, 10, 0.9, CAR)]  # car perfect, heavy missed
        report = map_at_iou(dets, gts, 0.5)
        assert report.per_class_ap["car"] == 1.0
        assert report.per_class_ap["heavy_vehicle"] == 0.0
        assert report.map_value == 0.5

    def test_absent_class_excluded(self):
        gts = [gt(0, 0, 10, 10, CAR)]
        dets = [det(0, 0, 10, 10, 0.9, CAR)]
        report = map_at_iou(dets, gts, 0.5)
        assert report.map_value == 1.0
        assert report.classes_absent == ("heavy_vehicle",)

    def test_empty_gt_rejected(self):
        with pytest.raises(EvaluationError):
            map_at_iou([], [], 0.5)

    def test_mean_property(self, rng):
        dets, gts = random_scene(rng, n_frames=6)
        if not gts:
            gts = [gt(0, 0, 10, 10)]
        report = map_at_iou(dets, gts, 0.5)
        assert report.map_value == pytest.approx(
            np.mean(list(report.per_class_ap.values())), abs=1e-12
        )


class TestSweep:
    def test_seven_reports(self):
        gts = [gt(0, 0, 20, 20)]
        dets = [det(0, 0, 20, 20, 0.9)]
        reports = iou_sweep(dets, gts, DEFAULT_IOU_THRESHOLDS)
        assert len(reports) == 7
        assert [r.iou_threshold for r in reports] == list(DEFAULT_IOU_THRESHOLDS)

    def test_perfect_detections_flat_at_one(self):
        gts = [gt(10, 10, 20, 20, CAR, f) for f in range(4)]
        dets = [det(10, 10, 20, 20, 0.9, CAR, f) for f in range(4)]
        for report in iou_sweep(dets, gts):
            assert report.map_value == 1.0

    def test_jittered_detections_non_increasing(self, rng):
        gts, dets = [], []
        for f in range(10):
            for k in range(3):
                x, y = 10 + 25 * k, 10 + 7 * f
                gts.append(gt(x, y, 20, 20, CAR, f))
                dets.append(det(x + 3, y, 20, 20, float(rng.uniform(0.5, 1)), CAR, f))
        values = [r.map_value for r in iou_sweep(dets, gts)]
        assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))
        assert values[0] > values[-1]  # IoU of +3 px on 20 px boxes is ~0.74



class TestPerVideo:
    def test_unweighted_mean(self):
        gts_by = {}
        dets_by = {}
        # video a: perfect; video b: all missed
        gts_by["a"] = [gt(0, 0, 10, 10, CAR, f) for f in range(3)]
        dets_by["a"] = [det(0, 0, 10, 10, 0.9, CAR, f) for f in range(3)]
        gts_by["b"] = [gt(0, 0, 10, 10, CAR, f) for f in range(3)]
        dets_by["b"] = []
        report = evaluate_per_video(dets_by, gts_by, 0.5)
        assert report.per_video == {"a": 1.0, "b": 0.0}
        assert report.map_value == 0.5
        text = per_video_table_text(report)
        assert "Avg" in text and "100.00" in text

    def test_skips_empty_videos(self):
        gts_by = {"a": [gt(0, 0, 10, 10)], "b": []}
        dets_by = {"a": [det(0, 0, 10, 10, 0.9)], "b": []}
        report = evaluate_per_video(dets_by, gts_by, 0.5)
        assert list(report.per_video) == ["a"]

    def test_pooled_consistency(self):
        # perfect per video implies perfect pooled
        gts, dets = [], []
        for v in range(3):
            for f in range(4):
                gts.append(gt(v * 30, 0, 10, 10, CAR, f + 100 * v))
                dets.append(det(v * 30, 0, 10, 10, 0.5 + 0.1 * v, CAR, f + 100 * v))
        assert map_at_iou(dets, gts, 0.5).map_value == 1.0


class TestHelpers:
    def test_filter_in_frame(self):
        dets = [
            det(10, 10, 20, 20, 0.9),
            det(-50, -50, 20, 20, 0.8),  # fully outside
            det(-5, -5, 20, 20, 0.7),  # straddles the border: kept
        ]
        kept, dropped = filter_in_frame(dets, (100, 100))
        assert len(kept) == 2 and dropped == 1

    def test_report_formats(self):
        gts = [gt(0, 0, 10, 10)]
        dets = [det(0, 0, 10, 10, 0.9)]
        reports = iou_sweep(dets, gts, (0.5, 0.6))
        text = report_table_text(reports)
        assert "0.50" in text
        csv = report_csv(reports)
        assert csv.splitlines()[0] == "iou_threshold,car,heavy_vehicle,map"
        plot = sweep_plot_data(reports)
        assert plot.splitlines() == ["0.5 1.000000", "0.6 1.000000"]
