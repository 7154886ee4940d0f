"""End-to-end optimization loop: target building, steps, checkpoints, resume.

The loop follows the training recipe the detector was designed around: Adam,
initial learning rate 1e-5, batch size 1, and total loss = focal
classification loss + smooth-L1 regression loss over positive anchors.
Desk-scale runs override the iteration budget and learning rate through
TrainConfig.
"""

from __future__ import annotations

import logging
import math
import os
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import MovingObjectInstance, VideoSequence, resize_with_boxes
from .errors import CheckpointError, ConfigError, MovrecError
from .flow import FlowConfig, FrameRingBuffer, MotionSaliencyStack, assemble_asof, build_cascade
from .losses import assign_anchors, focal_loss, smooth_l1
from .model import AnchorGrid, MotionSaliencyDetector, build_model, encode_boxes, make_variant

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 1
    max_iterations: int = 250_000
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    smooth_l1_beta: float = 1.0
    pos_iou: float = 0.5
    neg_iou: float = 0.4
    checkpoint_every: int = 5000
    log_every: int = 50
    seed: int = 0
    deterministic: bool = False
    hflip: bool = False  # off for paper-faithful runs
    lr_plateau: bool = False
    lr_plateau_factor: float = 0.5
    lr_plateau_patience: int = 2000
    max_grad_norm: float | None = None  # desk-scale runs benefit from 1.0
    freeze_bn_after: int | None = None  # recalibrate + freeze norm stats at this step

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not (0.0 <= self.neg_iou <= self.pos_iou <= 1.0):
            raise ConfigError("need 0 <= neg_iou <= pos_iou <= 1")
        if self.batch_size != 1:
            raise ConfigError("only batch_size=1 is supported")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")


@dataclass(frozen=True)
class LossBreakdown:
    classification_loss: float
    regression_loss: float
    total: float

    def __post_init__(self):
        for v in (self.classification_loss, self.regression_loss, self.total):
            if not math.isfinite(v) or v < 0:
                raise MovrecError(f"non-finite or negative loss: {self}")
        if abs(self.total - (self.classification_loss + self.regression_loss)) > 1e-6 * max(
            1.0, self.total
        ):
            raise MovrecError("loss breakdown does not add up")


class TrainingDiverged(MovrecError):
    def __init__(self, step: int, detail: str):
        super().__init__(f"non-finite loss at step {step}: {detail}")
        self.step = step


@dataclass
class TrainingExample:
    """One prepared batch: assembled inputs plus ground truth for the frame."""

    stack: MotionSaliencyStack
    gt_boxes: np.ndarray  # (M, 4) corner format
    gt_class_ids: np.ndarray  # (M,)
    source: str = ""


def set_determinism(seed: int) -> None:
    """Fixed seeds and deterministic kernels, for reproducible runs."""
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)
    os.environ.setdefault("CUBLAS_WORKSPACE_CONFIG", ":4096:8")


def stack_to_tensors(stack: MotionSaliencyStack, device="cpu"):
    flow = torch.from_numpy(np.ascontiguousarray(stack.flow_channels.transpose(2, 0, 1)))
    frame = torch.from_numpy(np.ascontiguousarray(stack.frame_channels.transpose(2, 0, 1)))
    return flow.unsqueeze(0).to(device), frame.unsqueeze(0).to(device)


def instances_to_arrays(instances: list[MovingObjectInstance]):
    boxes = np.array([i.box.as_tuple() for i in instances], dtype=np.float64).reshape(-1, 4)
    class_ids = np.array([i.label.id for i in instances], dtype=np.int64)
    return boxes, class_ids


def prepare_training_examples(
    sequences: list[VideoSequence],
    flow_config: FlowConfig,
    target_size: tuple[int, int] | None = None,
) -> list[TrainingExample]:
    """Assemble one example per trainable frame of every sequence.

    The first max(lags) frames of each sequence are warm-up and skipped.
    Frames with no moving object are kept as pure-negative batches.
    """
    examples = []
    max_lag = max(flow_config.lags)
    for seq in sequences:
        buffer = FrameRingBuffer(capacity=max_lag + 1)
        per_frame = {}
        for inst in seq.annotations:
            per_frame.setdefault(inst.frame_index, []).append(inst)
        for frame in seq.frames:
            annos = per_frame.get(frame.index, [])
            if target_size is not None:
                frame, annos = resize_with_boxes(frame, annos, target_size)
            buffer.push(frame)
            if frame.index < max_lag:
                continue
            cascade = build_cascade(buffer, frame.index, flow_config.lags, flow_config)
            stack = assemble_asof(cascade, frame, flow_config)
            boxes, class_ids = instances_to_arrays(annos)
            examples.append(
                TrainingExample(
                    stack=stack,
                    gt_boxes=boxes,
                    gt_class_ids=class_ids,
                    source=f"{seq.name}:{frame.index}",
                )
            )
    return examples


def compute_losses(
    predictions,
    anchors: AnchorGrid,
    gt_boxes: np.ndarray,
    gt_class_ids: np.ndarray,
    config: TrainConfig,
):
    """Focal + smooth-L1 for a single image's dense predictions."""
    logits = predictions.class_logits[0]
    deltas = predictions.box_deltas[0]
    if logits.shape[0] != anchors.total:
        raise ValueError(
            f"prediction anchor dim {logits.shape[0]} != anchor grid total {anchors.total}"
        )
    assignment = assign_anchors(
        anchors.corners, gt_boxes, gt_class_ids, config.pos_iou, config.neg_iou
    )
    targets = torch.from_numpy(assignment.class_targets)
    cls_loss = focal_loss(logits, targets, config.focal_alpha, config.focal_gamma)

    pos = assignment.class_targets >= 0
    if pos.any():
        matched = assignment.matched_gt[pos]
        target_deltas = encode_boxes(
            gt_boxes[matched], anchors.centers[pos], anchors.config.variances
        )
        reg_loss = smooth_l1(
            deltas[torch.from_numpy(np.flatnonzero(pos))],
            torch.as_tensor(target_deltas, dtype=deltas.dtype, device=deltas.device),
            config.smooth_l1_beta,
        )
    else:
        reg_loss = deltas.sum() * 0.0
    return cls_loss, reg_loss


def set_bn_eval(model: torch.nn.Module) -> None:
    """Switch norm layers to their frozen running statistics."""
    for m in model.modules():
        if isinstance(m, torch.nn.modules.batchnorm._BatchNorm):
            m.eval()


def recalibrate_batchnorm(
    model: torch.nn.Module,
    examples: list[TrainingExample],
    device="cpu",
) -> None:
    """Recompute norm running statistics as an exact average over examples.

    Batch-size-1 training leaves the running estimates as a noisy, recency-
    weighted average, which opens a train/eval behavior gap; a cumulative
    pass over the training set closes most of it.
    """
    bns = [m for m in model.modules() if isinstance(m, torch.nn.modules.batchnorm._BatchNorm)]
    if not bns:
        return
    momenta = [m.momentum for m in bns]
    for m in bns:
        m.reset_running_stats()
        m.momentum = None  # cumulative moving average
    was_training = model.training
    model.train()
    with torch.no_grad():
        for ex in examples:
            flow, frame = stack_to_tensors(ex.stack, device)
            model(flow, frame)
    for m, mom in zip(bns, momenta):
        m.momentum = mom
    model.train(was_training)


def train_step(
    model: MotionSaliencyDetector,
    optimizer: torch.optim.Optimizer,
    example: TrainingExample,
    anchors: AnchorGrid,
    config: TrainConfig,
    device="cpu",
    bn_frozen: bool = False,
) -> LossBreakdown:
    """One forward/backward/update on a single example."""
    model.train()
    if bn_frozen:
        set_bn_eval(model)
    flow, frame = stack_to_tensors(example.stack, device)
    try:
        predictions = model(flow, frame)
        cls_loss, reg_loss = compute_losses(
            predictions, anchors, example.gt_boxes, example.gt_class_ids, config
        )
    except ValueError as exc:
        if "NaN" in str(exc) or "finite" in str(exc):
            raise TrainingDiverged(-1, str(exc)) from None
        raise
    total = cls_loss + reg_loss
    if not torch.isfinite(total):
        raise TrainingDiverged(-1, f"cls={float(cls_loss)} reg={float(reg_loss)}")
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    if config.max_grad_norm is not None:
        torch.nn.utils.clip_grad_norm_(model.parameters(), config.max_grad_norm)
    optimizer.step()
    return LossBreakdown(
        classification_loss=float(cls_loss.detach()),
        regression_loss=float(reg_loss.detach()),
        total=float(total.detach()),
    )


def _hflip_example(example: TrainingExample, width: float) -> TrainingExample:
    stack = MotionSaliencyStack(
        flow_channels=np.ascontiguousarray(example.stack.flow_channels[:, ::-1, :]),
        frame_channels=np.ascontiguousarray(example.stack.frame_channels[:, ::-1, :]),
    )
    boxes = example.gt_boxes.copy()
    if boxes.size:
        boxes[:, [0, 2]] = width - boxes[:, [2, 0]]
    return TrainingExample(stack, boxes, example.gt_class_ids, example.source + ":hflip")


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(
    path,
    model: MotionSaliencyDetector,
    optimizer: torch.optim.Optimizer | None,
    step: int,
    train_config: TrainConfig,
    metrics: dict | None = None,
    run_config: dict | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "variant": model.variant.version,
        "lags": list(model.variant.lags),
        "pretrained": model.variant.backbone.pretrained,
        "flow_channels": model.flow_channels,
        "num_classes": model.num_classes,
        "anchor_config": asdict(model.anchor_config),
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "step": step,
        "train_config": asdict(train_config),
        "metrics": metrics or {},
        "run_config": run_config,
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format {payload.get('format_version')!r} in {path}"
        )
    return payload


def model_from_checkpoint(payload: dict) -> MotionSaliencyDetector:
    from .model.anchors import AnchorConfig

    anchor_config = AnchorConfig(
        base_size=payload["anchor_config"]["base_size"],
        scales=tuple(payload["anchor_config"]["scales"]),
        ratios=tuple(payload["anchor_config"]["ratios"]),
        variances=tuple(payload["anchor_config"]["variances"]),
    )
    # Weights come from the checkpoint, so never re-download pretrained ones.
    variant = make_variant(payload["variant"], payload["lags"], False)
    model = build_model(
        variant,
        num_classes=payload["num_classes"],
        anchor_config=anchor_config,
        flow_channels=payload["flow_channels"],
    )
    model.load_state_dict(payload["model_state"])
    return model


# ---------------------------------------------------------------------------
# The loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    final_checkpoint: Path
    steps_run: int
    last_loss: LossBreakdown | None
    checkpoints: list[Path] = field(default_factory=list)


def _epoch_order(n: int, epoch: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng((seed, epoch))
    return rng.permutation(n)


def train_loop(
    model: MotionSaliencyDetector,
    examples: list[TrainingExample],
    config: TrainConfig,
    out_dir,
    input_size: tuple[int, int],
    device="cpu",
    resume_from=None,
    run_config: dict | None = None,
    max_steps: int | None = None,
) -> TrainResult:
    """Run (or resume) optimization over the prepared examples.

    Example order is reshuffled every epoch from a seed derived from
    (config.seed, epoch), so a resumed run replays the identical stream.
    Checkpoints are written every ``checkpoint_every`` steps and at the end;
    per-step losses are appended to ``metrics.log`` in the output directory.
    """
    if not examples:
        raise ConfigError("no training examples (all frames inside the warm-up window?)")
    if config.deterministic:
        set_determinism(config.seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.log"

    model.to(device)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    start_step = 0
    if resume_from is not None:
        payload = load_checkpoint(resume_from)
        model.load_state_dict(payload["model_state"])
        if payload["optimizer_state"] is not None:
            optimizer.load_state_dict(payload["optimizer_state"])
        start_step = payload["step"]
        log.info("resumed from %s at step %d", resume_from, start_step)

    anchors = model.anchors_for(tuple(input_size))
    total_steps = min(config.max_iterations, max_steps or config.max_iterations)
    scheduler = None
    if config.lr_plateau:
        scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
            optimizer, factor=config.lr_plateau_factor, patience=config.lr_plateau_patience
        )

    n = len(examples)
    width = float(examples[0].stack.frame_channels.shape[1])
    last = None
    checkpoints = []
    freeze_at = config.freeze_bn_after
    # On resume past the freeze point the checkpoint already carries the
    # frozen statistics, so only the flag needs restoring.
    bn_frozen = freeze_at is not None and start_step >= freeze_at
    with metrics_path.open("a", encoding="utf-8") as metrics:
        for step in range(start_step, total_steps):
            if freeze_at is not None and step == freeze_at and not bn_frozen:
                recalibrate_batchnorm(model, examples, device)
                bn_frozen = True
            epoch, pos = divmod(step, n)
            order = _epoch_order(n, epoch, config.seed)
            example = examples[int(order[pos])]
            if config.hflip:
                # Step-keyed rng keeps the flip choice replayable on resume.
                if np.random.default_rng((config.seed, 0xF11B, step)).random() < 0.5:
                    example = _hflip_example(example, width)
            try:
                last = train_step(
                    model, optimizer, example, anchors, config, device, bn_frozen=bn_frozen
                )
            except TrainingDiverged as exc:
                exc.step = step
                save_checkpoint(
                    out_dir / "diverged.ckpt", model, optimizer, step, config, run_config=run_config
                )
                raise TrainingDiverged(step, str(exc)) from None
            metrics.write(
                f"{step} {last.classification_loss:.6f} {last.regression_loss:.6f} {last.total:.6f}\n"
            )
            if scheduler is not None:
                scheduler.step(last.total)
            if config.log_every and (step + 1) % config.log_every == 0:
                metrics.flush()
                log.info(
                    "step %d cls %.4f reg %.4f total %.4f",
                    step,
                    last.classification_loss,
                    last.regression_loss,
                    last.total,
                )
            if config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
                ck = save_checkpoint(
                    out_dir / f"step{step + 1:08d}.ckpt",
                    model,
                    optimizer,
                    step + 1,
                    config,
                    metrics={"total": last.total},
                    run_config=run_config,
                )
                checkpoints.append(ck)

    final = save_checkpoint(
        out_dir / "final.ckpt",
        model,
        optimizer,
        total_steps,
        config,
        metrics={"total": last.total if last else float("nan")},
        run_config=run_config,
    )
    checkpoints.append(final)
    return TrainResult(
        final_checkpoint=final,
        steps_run=total_steps - start_step,
        last_loss=last,
        checkpoints=checkpoints,
    )
