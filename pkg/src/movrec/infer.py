"""Online per-frame inference: decode, filter, suppress, emit detections.

Per pyramid level the top 1000 scores above the 0.05 confidence floor are
kept; survivors from all levels are merged and reduced by per-class greedy
NMS at IoU 0.5, capped at 300 detections per frame.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
import torch

from .data import ClassLabel, VideoSequence, label_from_id
from .errors import MovrecError
from .flow import FlowConfig, FrameRingBuffer, assemble_asof, build_cascade
from .geometry import BoundingBox, iou_matrix
from .model import MotionSaliencyDetector, decode_boxes
from .train import stack_to_tensors

# Overlay colors (RGB): red for car, green for heavy vehicle.
CLASS_COLORS = {0: (255, 0, 0), 1: (0, 255, 0)}


@dataclass(frozen=True)
class InferenceConfig:
    confidence_floor: float = 0.05
    top_k_per_level: int = 1000
    nms_iou: float = 0.5
    max_detections: int = 300

    def __post_init__(self):
        if not (0.0 <= self.confidence_floor <= 1.0):
            raise ValueError("confidence_floor must be in [0, 1]")
        if self.top_k_per_level < 1:
            raise ValueError("top_k_per_level must be >= 1")
        if not (0.0 < self.nms_iou < 1.0):
            raise ValueError("nms_iou must be in (0, 1)")
        if self.max_detections < 1:
            raise ValueError("max_detections must be >= 1")


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    label: ClassLabel
    score: float
    frame_index: int = 0


def nms_indices(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float) -> list[int]:
    """Greedy NMS over one class. Ties broken by lower index for determinism."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if not np.isfinite(scores).all():
        raise ValueError("non-finite scores")
    order = np.argsort(-scores, kind="stable")
    keep = []
    while order.size > 0:
        i = int(order[0])
        keep.append(i)
        if order.size == 1:
            break
        ious = iou_matrix(boxes[i : i + 1], boxes[order[1:]])[0]
        order = order[1:][ious < iou_threshold]
    return keep


def nms_detections(candidates: list[Detection], iou_threshold: float) -> list[Detection]:
    """Per-class greedy NMS; output sorted by descending score."""
    out = []
    by_class: dict[int, list[Detection]] = {}
    for d in candidates:
        by_class.setdefault(d.label.id, []).append(d)
    for _, dets in sorted(by_class.items()):
        boxes = np.array([d.box.as_tuple() for d in dets])
        scores = np.array([d.score for d in dets])
        out.extend(dets[i] for i in nms_indices(boxes, scores, iou_threshold))
    out.sort(key=lambda d: -d.score)
    return out


def decode_predictions(
    predictions,
    anchors,
    config: InferenceConfig,
    frame_size: tuple[int, int],
    frame_index: int = 0,
) -> list[Detection]:
    """Turn per-level dense outputs into final detections for one frame."""
    fh, fw = frame_size
    candidates = []
    for level_idx, (logits, deltas) in enumerate(predictions.split_levels()):
        scores = torch.sigmoid(logits[0]).detach().cpu().numpy().astype(np.float64)
        if not np.isfinite(scores).all():
            raise MovrecError(f"non-finite class scores at level {level_idx}")
        level_deltas = deltas[0].detach().cpu().numpy().astype(np.float64)
        if not np.isfinite(level_deltas).all():
            raise MovrecError(f"non-finite box deltas at level {level_idx}")
        anchor_idx, class_idx = np.nonzero(scores >= config.confidence_floor)
        if anchor_idx.size == 0:
            continue
        flat_scores = scores[anchor_idx, class_idx]
        if flat_scores.size > config.top_k_per_level:
            top = np.argsort(-flat_scores, kind="stable")[: config.top_k_per_level]
            anchor_idx, class_idx, flat_scores = anchor_idx[top], class_idx[top], flat_scores[top]
        level_anchors = anchors.per_level[level_idx]
        boxes = decode_boxes(
            level_deltas[anchor_idx],
            level_anchors[anchor_idx],
            anchors.config.variances,
            clip_to=(fh, fw),
        )
        for (x1, y1, x2, y2), cid, score in zip(boxes, class_idx, flat_scores):
            if x2 - x1 <= 0 or y2 - y1 <= 0:
                continue  # collapsed entirely outside the frame
            candidates.append(
                Detection(
                    box=BoundingBox(float(x1), float(y1), float(x2), float(y2)),
                    label=label_from_id(int(cid)),
                    score=float(score),
                    frame_index=frame_index,
                )
            )
    kept = nms_detections(candidates, config.nms_iou)
    return kept[: config.max_detections]


def infer_frame(
    model: MotionSaliencyDetector,
    buffer: FrameRingBuffer,
    t: int,
    flow_config: FlowConfig,
    infer_config: InferenceConfig | None = None,
    device="cpu",
) -> list[Detection]:
    """Detect moving objects in frame ``t`` using only buffered history.

    Raises NotEnoughHistory during the warm-up window at stream start.
    """
    infer_config = infer_config or InferenceConfig()
    cascade = build_cascade(buffer, t, flow_config.lags, flow_config)
    frame = buffer.get(t)
    stack = assemble_asof(cascade, frame, flow_config)
    model.eval()
    with torch.no_grad():
        flow, image = stack_to_tensors(stack, device)
        predictions = model(flow, image)
    anchors = model.anchors_for(frame.size)
    return decode_predictions(predictions, anchors, infer_config, frame.size, frame_index=t)


def run_sequence(
    model: MotionSaliencyDetector,
    sequence: VideoSequence,
    flow_config: FlowConfig,
    infer_config: InferenceConfig | None = None,
    device="cpu",
    prefetch: int = 0,
):
    """Stream a sequence in order, yielding (frame_index, detections).

    Warm-up frames (t < max lag) yield no entry.  With ``prefetch`` > 0 the
    flow stage runs in a worker thread feeding the model stage through a
    bounded queue; output order and content match the synchronous path.
    """
    infer_config = infer_config or InferenceConfig()
    max_lag = max(flow_config.lags)
    if prefetch <= 0:
        buffer = FrameRingBuffer(capacity=max_lag + 1)
        for frame in sequence.frames:
            buffer.push(frame)
            if frame.index < max_lag:
                continue
            yield frame.index, infer_frame(
                model, buffer, frame.index, flow_config, infer_config, device
            )
        return

    import queue
    import threading

    stacks: "queue.Queue" = queue.Queue(maxsize=prefetch)
    failure = []

    def flow_stage():
        buffer = FrameRingBuffer(capacity=max_lag + 1)
        try:
            for frame in sequence.frames:
                buffer.push(frame)
                if frame.index < max_lag:
                    continue
                cascade = build_cascade(buffer, frame.index, flow_config.lags, flow_config)
                stack = assemble_asof(cascade, frame, flow_config)
                stacks.put((frame.index, frame.size, stack))
        except BaseException as exc:  # propagated to the consumer
            failure.append(exc)
        finally:
            stacks.put(None)

    worker = threading.Thread(target=flow_stage, name="flow-stage", daemon=True)
    worker.start()
    model.eval()
    try:
        while True:
            item = stacks.get()
            if item is None:
                break
            t, frame_size, stack = item
            with torch.no_grad():
                flow, image = stack_to_tensors(stack, device)
                predictions = model(flow, image)
            anchors = model.anchors_for(frame_size)
            yield t, decode_predictions(predictions, anchors, infer_config, frame_size, t)
    finally:
        # Unblock the producer if the consumer stopped early.
        while worker.is_alive():
            try:
                stacks.get_nowait()
            except queue.Empty:
                worker.join(timeout=0.05)
        worker.join()
    if failure:
        raise failure[0]


@dataclass(frozen=True)
class RuntimeProfile:
    fps_with_flow: float
    fps_model_only: float
    n_parameters: int
    n_frames: int
    checkpoint_bytes: int | None = None


def profile_inference(
    model: MotionSaliencyDetector,
    sequence: VideoSequence,
    flow_config: FlowConfig,
    infer_config: InferenceConfig | None = None,
    device="cpu",
    checkpoint_path=None,
) -> RuntimeProfile:
    """Wall-clock throughput over a sequence, with and without flow time."""
    infer_config = infer_config or InferenceConfig()
    max_lag = max(flow_config.lags)
    buffer = FrameRingBuffer(capacity=max_lag + 1)
    model.eval()
    n_processed = 0
    flow_time = 0.0
    t_start = time.perf_counter()
    for frame in sequence.frames:
        buffer.push(frame)
        if frame.index < max_lag:
            continue
        f0 = time.perf_counter()
        cascade = build_cascade(buffer, frame.index, flow_config.lags, flow_config)
        stack = assemble_asof(cascade, frame, flow_config)
        flow_time += time.perf_counter() - f0
        with torch.no_grad():
            flow, image = stack_to_tensors(stack, device)
            predictions = model(flow, image)
        anchors = model.anchors_for(frame.size)
        decode_predictions(predictions, anchors, infer_config, frame.size, frame.index)
        n_processed += 1
    elapsed = time.perf_counter() - t_start
    ckpt_bytes = Path(checkpoint_path).stat().st_size if checkpoint_path else None
    return RuntimeProfile(
        fps_with_flow=n_processed / elapsed if elapsed > 0 else float("inf"),
        fps_model_only=n_processed / (elapsed - flow_time) if elapsed > flow_time else float("inf"),
        n_parameters=model.num_parameters,
        n_frames=n_processed,
        checkpoint_bytes=ckpt_bytes,
    )


# ---------------------------------------------------------------------------
# Detections file and overlays
# ---------------------------------------------------------------------------


def format_detection_line(det: Detection) -> str:
    b = det.box
    return (
        f"{det.frame_index} {b.x1:.4f} {b.y1:.4f} {b.x2:.4f} {b.y2:.4f} "
        f"{det.label.id} {det.score:.6f}"
    )


def write_detections(path, detections: list[Detection]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        "".join(format_detection_line(d) + "\n" for d in detections), encoding="utf-8"
    )


def read_detections(path) -> list[Detection]:
    path = Path(path)
    out = []
    for line_no, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        raw = raw.strip()
        if not raw:
            continue
        parts = raw.split()
        if len(parts) != 7:
            raise MovrecError(f"{path}:{line_no}: expected 7 fields, got {len(parts)}")
        frame_index = int(parts[0])
        x1, y1, x2, y2 = (float(p) for p in parts[1:5])
        out.append(
            Detection(
                box=BoundingBox(x1, y1, x2, y2),
                label=label_from_id(int(parts[5])),
                score=float(parts[6]),
                frame_index=frame_index,
            )
        )
    return out


def draw_detections(pixels: np.ndarray, detections: list[Detection]) -> np.ndarray:
    """Overlay boxes on an RGB frame (red = car, green = heavy vehicle)."""
    canvas = pixels.copy()
    for det in detections:
        color = CLASS_COLORS.get(det.label.id, (255, 255, 0))
        b = det.box
        cv2.rectangle(
            canvas,
            (int(round(b.x1)), int(round(b.y1))),
            (int(round(b.x2)), int(round(b.y2))),
            color,
            1,
        )
    return canvas
