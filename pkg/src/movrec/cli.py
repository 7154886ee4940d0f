"""Command-line entry points wiring the modules into reproducible runs.

Commands: train, infer, eval, stats, synth, visualize.  Every command writes
its outputs under a fresh run directory named by timestamp + config hash and
exits nonzero with a one-line diagnostic on error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import evaluate
from .config import (
    RunConfig,
    config_hash,
    load_config,
    save_config,
)
from .data import (
    compute_dataset_stats,
    load_sequence,
    scan_dataset,
    stats_report_csv,
    stats_report_text,
    write_frame_image,
    write_sequence,
)
from .errors import CheckpointError, ConfigError, MovrecError
from .flow import FlowConfig, FrameRingBuffer, assemble_asof, build_cascade
from .infer import (
    draw_detections,
    profile_inference,
    read_detections,
    run_sequence,
    write_detections,
)
from .model import build_model, make_variant
from .synth import generate_video, standard_suites
from .train import (
    load_checkpoint,
    model_from_checkpoint,
    prepare_training_examples,
    set_determinism,
    stack_to_tensors,
    train_loop,
)


def device_from_env() -> str:
    return os.environ.get("MOVREC_DEVICE", "cpu")


def make_run_dir(base, config: RunConfig) -> Path:
    """Timestamped run directory; never reuses an existing one."""
    base = Path(base)
    stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
    stem = f"{stamp}-{config_hash(config)}"
    candidate = base / stem
    suffix = 0
    while candidate.exists():
        suffix += 1
        candidate = base / f"{stem}-{suffix}"
    candidate.mkdir(parents=True)
    save_config(config, candidate / "config.yaml")
    return candidate


def _parse_lags(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"cannot parse lags {text!r}") from None


def _parse_thresholds(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(p) for p in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"cannot parse thresholds {text!r}") from None


def _config_from_args(args) -> RunConfig:
    overrides: dict = {}
    for section in ("flow", "model", "train", "infer", "eval"):
        overrides[section] = {}
    if getattr(args, "variant", None):
        overrides["model"]["variant"] = args.variant
    if getattr(args, "size", None):
        overrides["model"]["input_size"] = args.size
    if getattr(args, "pretrained", False):
        overrides["model"]["backbone"] = {"pretrained": True}
    if getattr(args, "lags", None):
        overrides["flow"]["lags"] = list(_parse_lags(args.lags))
    if getattr(args, "lr", None):
        overrides["train"]["learning_rate"] = args.lr
    if getattr(args, "steps", None):
        overrides["train"]["max_iterations"] = args.steps
    if getattr(args, "seed", None) is not None:
        overrides["train"]["seed"] = args.seed
    if getattr(args, "deterministic", False):
        overrides["train"]["deterministic"] = True
    if getattr(args, "checkpoint_every", None):
        overrides["train"]["checkpoint_every"] = args.checkpoint_every
    if getattr(args, "thresholds", None):
        overrides["eval"]["thresholds"] = list(_parse_thresholds(args.thresholds))
    if getattr(args, "allow_custom_lags", False):
        overrides["allow_custom_lags"] = True
    overrides = {k: v for k, v in overrides.items() if v or not isinstance(v, dict)}
    return load_config(getattr(args, "config", None), overrides)


def _load_dataset_sequences(root) -> list:
    root = Path(root)
    if not root.is_dir():
        raise ConfigError(f"dataset root not found: {root}")
    video_dirs = sorted(p for p in root.iterdir() if (p / "frames").is_dir())
    if not video_dirs:
        raise ConfigError(f"no <video>/frames directories under {root}")
    return [load_sequence(d) for d in video_dirs]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    config = _config_from_args(args)
    variant = make_variant(config.model.variant, config.flow.lags, config.model.pretrained)
    run_dir = make_run_dir(args.out, config)
    sequences = _load_dataset_sequences(args.data)
    if config.train.deterministic:
        set_determinism(config.train.seed)
    examples = prepare_training_examples(sequences, config.flow, config.input_hw)
    model = build_model(
        variant,
        input_size=config.input_hw,
        anchor_config=config.model.anchors,
        flow_channels=config.flow.n_channels,
        head_depth=config.model.head_depth,
        head_width=config.model.head_width,
    )
    print(f"run dir: {run_dir}")
    print(f"model {variant.version} lags={variant.lags} parameters={model.num_parameters:,}")
    result = train_loop(
        model,
        examples,
        config.train,
        run_dir,
        config.input_hw,
        device=device_from_env(),
        resume_from=args.resume,
        run_config=asdict(config),
    )
    print(f"trained {result.steps_run} steps; final checkpoint {result.final_checkpoint}")
    return 0


def _model_and_flow_from_checkpoint(path, config: RunConfig | None):
    payload = load_checkpoint(path)
    model = model_from_checkpoint(payload)
    lags = tuple(payload["lags"])
    if config is not None and config.model.variant != payload["variant"]:
        raise CheckpointError(
            f"checkpoint variant {payload['variant']} does not match config "
            f"{config.model.variant}"
        )
    if config is not None and tuple(config.flow.lags) != lags:
        raise CheckpointError(
            f"checkpoint lags {lags} do not match configured lags {tuple(config.flow.lags)}"
        )
    flow_config = config.flow if config is not None else FlowConfig(lags=lags)
    return model, flow_config, payload


def cmd_infer(args) -> int:
    payload = load_checkpoint(args.checkpoint)
    base_config = load_config(args.config) if args.config else None
    if base_config is None:
        # Adopt the checkpoint's own provenance so the run is self-contained.
        overrides = {
            "model": {"variant": payload["variant"]},
            "flow": {"lags": list(payload["lags"])},
        }
        if payload.get("run_config"):
            rc = payload["run_config"]
            overrides["model"]["input_size"] = rc["model"]["input_size"]
        config = load_config(None, overrides)
    else:
        config = base_config
    model, flow_config, payload = _model_and_flow_from_checkpoint(args.checkpoint, config)
    if args.deterministic:
        config = replace(config, train=replace(config.train, deterministic=True))
        set_determinism(config.train.seed)
    run_dir = make_run_dir(args.out, config)
    sequence = load_sequence(args.video)
    target = config.input_hw
    if sequence.frame_size != target:
        from .data import resize_with_boxes

        frames = []
        for fr in sequence.frames:
            fr2, _ = resize_with_boxes(fr, [], target)
            frames.append(fr2)
        sequence = replace(sequence, frames=frames, annotations=[])
    device = device_from_env()
    model.to(device)
    all_dets = []
    n_frames = 0
    overlay_dir = run_dir / "overlays"
    prefetch = 0 if args.deterministic else 2  # staged pipeline off in replay mode
    for t, dets in run_sequence(model, sequence, flow_config, config.infer, device, prefetch):
        all_dets.extend(dets)
        n_frames += 1
        if args.overlay:
            frame = sequence.frames[t]
            write_frame_image(overlay_dir / f"{t:06d}.png", draw_detections(frame.pixels, dets))
        if args.dump_flow:
            from .flow import assemble_asof, build_cascade, flow_debug_images

            buffer = FrameRingBuffer(capacity=max(flow_config.lags) + 1)
            for fr in sequence.frames[max(0, t - max(flow_config.lags)) : t + 1]:
                buffer.push(fr)
            cascade = build_cascade(buffer, t, flow_config.lags, flow_config)
            stack = assemble_asof(cascade, sequence.frames[t], flow_config)
            for ci, img in enumerate(flow_debug_images(stack)):
                write_frame_image(
                    run_dir / "flow" / f"{t:06d}_lag{flow_config.lags[ci]}.png",
                    np.stack([img] * 3, axis=-1),
                )
    det_path = run_dir / "detections.txt"
    write_detections(det_path, all_dets)
    import json

    per_class: dict = {}
    for d in all_dets:
        per_class[d.label.name] = per_class.get(d.label.name, 0) + 1
    summary = {
        "video": str(args.video),
        "frames_processed": n_frames,
        "warm_up_frames": max(flow_config.lags),
        "n_detections": len(all_dets),
        "detections_per_class": per_class,
        "variant": payload["variant"],
        "lags": list(flow_config.lags),
        "input_size": config.model.input_size,
    }
    (run_dir / "results.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(f"run dir: {run_dir}")
    print(f"wrote {len(all_dets)} detections for frames >= {max(flow_config.lags)} to {det_path}")
    if args.profile:
        profile = profile_inference(
            model, sequence, flow_config, config.infer, device, args.checkpoint
        )
        size_mb = (profile.checkpoint_bytes or 0) / 1e6
        print(
            f"profile: {profile.fps_with_flow:.2f} FPS with flow, "
            f"{profile.fps_model_only:.2f} FPS model-only, "
            f"{profile.n_parameters:,} parameters, checkpoint {size_mb:.1f} MB"
        )
    return 0


def _scaled_ground_truth(video_dir, target_hw):
    """Annotation boxes of one video, scaled into the inference input space."""
    from .data import SequenceInfo, load_annotation_dir, read_frame_image

    video_dir = Path(video_dir)
    frame_paths = sorted((video_dir / "frames").glob("*.png")) + sorted(
        (video_dir / "frames").glob("*.jpg")
    )
    if not frame_paths:
        raise ConfigError(f"no frames under {video_dir}")
    first = read_frame_image(frame_paths[0])
    fh, fw = first.shape[0], first.shape[1]
    annos = load_annotation_dir(video_dir / "labels", "corner", (fh, fw))
    sy = target_hw[0] / fh
    sx = target_hw[1] / fw
    if (sx, sy) != (1.0, 1.0):
        from .data import MovingObjectInstance

        annos = [
            MovingObjectInstance(a.box.scaled(sx, sy), a.label, a.frame_index) for a in annos
        ]
    return annos


def cmd_eval(args) -> int:
    config = _config_from_args(args)
    run_dir = make_run_dir(args.out, config)
    target = config.input_hw
    thresholds = config.eval.thresholds

    if args.video:
        gts = _scaled_ground_truth(args.video, target)
        dets = read_detections(args.detections)
        dets, n_outside = evaluate.filter_in_frame(dets, target)
        reports = evaluate.iou_sweep(dets, gts, thresholds)
        (run_dir / "sweep.txt").write_text(evaluate.report_table_text(reports), encoding="utf-8")
        (run_dir / "sweep.csv").write_text(evaluate.report_csv(reports), encoding="utf-8")
        (run_dir / "sweep_plot.txt").write_text(evaluate.sweep_plot_data(reports), encoding="utf-8")
        print(f"run dir: {run_dir}")
        if n_outside:
            print(f"discarded {n_outside} detections fully outside the frame")
        print(evaluate.report_table_text(reports), end="")
    else:
        root = Path(args.data)
        det_dir = Path(args.detections_dir)
        dets_by_video, gts_by_video = {}, {}
        for video_dir in sorted(p for p in root.iterdir() if (p / "frames").is_dir()):
            det_file = det_dir / f"{video_dir.name}.txt"
            if not det_file.is_file():
                raise ConfigError(f"missing detections file {det_file}")
            dets, _ = evaluate.filter_in_frame(read_detections(det_file), target)
            dets_by_video[video_dir.name] = dets
            gts_by_video[video_dir.name] = _scaled_ground_truth(video_dir, target)
        report = evaluate.evaluate_per_video(dets_by_video, gts_by_video, args.per_video_iou)
        text = evaluate.per_video_table_text(report)
        (run_dir / "per_video.txt").write_text(text, encoding="utf-8")
        print(f"run dir: {run_dir}")
        print(text, end="")
    return 0


def cmd_stats(args) -> int:
    config = _config_from_args(args)
    run_dir = make_run_dir(args.out, config)
    infos = scan_dataset(args.data)
    normalize = None if args.native else (608, 608)
    stats = compute_dataset_stats(infos, normalize_to=normalize)
    text = stats_report_text(stats)
    (run_dir / "stats.txt").write_text(text, encoding="utf-8")
    (run_dir / "stats.csv").write_text(stats_report_csv(stats), encoding="utf-8")
    print(f"run dir: {run_dir}")
    print(text, end="")
    return 0


def cmd_synth(args) -> int:
    suites = standard_suites()
    if args.list:
        for name, spec in suites.items():
            print(f"{name}: {len(spec.sprites)} sprites, {spec.n_frames} frames, pan={spec.camera_pan}")
        return 0
    wanted = list(suites) if args.suite == "all" else [args.suite]
    unknown = [s for s in wanted if s not in suites]
    if unknown:
        raise ConfigError(f"unknown suite(s) {unknown}; available: {sorted(suites)}")
    out = Path(args.out)
    for name in wanted:
        video = generate_video(suites[name], name=name)
        video_dir = write_sequence(video.sequence, out, name)
        n_gt = len(video.sequence.annotations)
        print(f"{name}: wrote {video.sequence.n_frames} frames, {n_gt} gt instances -> {video_dir}")
    return 0


def cmd_visualize(args) -> int:
    import cv2
    import torch

    payload = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(payload)
    flow_config = FlowConfig(lags=tuple(payload["lags"]))
    config = load_config(
        args.config,
        {"model": {"variant": payload["variant"]}, "flow": {"lags": list(payload["lags"])}},
    )
    run_dir = make_run_dir(args.out, config)
    sequence = load_sequence(args.video)
    target = config.input_hw
    if sequence.frame_size != target:
        from .data import resize_with_boxes

        frames = [resize_with_boxes(fr, [], target)[0] for fr in sequence.frames]
        sequence = replace(sequence, frames=frames, annotations=[])
    t = args.frame
    max_lag = max(flow_config.lags)
    if t < max_lag or t >= sequence.n_frames:
        raise ConfigError(f"frame must be in [{max_lag}, {sequence.n_frames - 1}]")
    buffer = FrameRingBuffer(capacity=max_lag + 1)
    for frame in sequence.frames[: t + 1]:
        buffer.push(frame)
    cascade = build_cascade(buffer, t, flow_config.lags, flow_config)
    stack = assemble_asof(cascade, buffer.get(t), flow_config)
    model.eval()
    with torch.no_grad():
        flow, image = stack_to_tensors(stack)
        pyramid = model.forward_features(flow, image)
        fused_input = torch.cat([flow, image], dim=1)

    def heatmap(tensor) -> np.ndarray:
        act = tensor[0].abs().mean(dim=0).cpu().numpy()
        lo, hi = float(act.min()), float(act.max())
        norm = (act - lo) / (hi - lo) if hi > lo else np.zeros_like(act)
        gray = (norm * 255).astype(np.uint8)
        color = cv2.applyColorMap(gray, cv2.COLORMAP_JET)
        return cv2.cvtColor(color, cv2.COLOR_BGR2RGB)

    outputs = {
        "input_fusion": heatmap(fused_input),
        "p3": heatmap(pyramid["P3"]),
        "p4": heatmap(pyramid["P4"]),
    }
    for name, img in outputs.items():
        write_frame_image(run_dir / f"frame{t:06d}_{name}.png", img)
    print(f"run dir: {run_dir}")
    print(f"wrote {len(outputs)} heatmaps for frame {t}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="movrec", description="Moving-object recognition pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", default=None, help="YAML config file")
        p.add_argument("--out", default="runs", help="base directory for run outputs")

    p = sub.add_parser("train", help="train a model on a dataset directory")
    add_common(p)
    p.add_argument("--data", required=True, help="dataset root (<video>/frames + labels)")
    p.add_argument("--variant", choices=["v1", "v2", "v3", "v4"], default=None)
    p.add_argument("--lags", default=None, help="comma-separated flow lags, e.g. 1,3")
    p.add_argument("--allow-custom-lags", action="store_true", dest="allow_custom_lags")
    p.add_argument("--steps", type=int, default=None, help="override max iterations")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--size", type=int, default=None, help="input size (square)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--checkpoint-every", type=int, default=None, dest="checkpoint_every")
    p.add_argument("--pretrained", action="store_true")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="run online inference over a video directory")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--video", required=True, help="video directory with frames/")
    p.add_argument("--overlay", action="store_true", help="write annotated frames")
    p.add_argument("--dump-flow", action="store_true", dest="dump_flow",
                   help="write flow saliency channels as grayscale images")
    p.add_argument("--profile", action="store_true", help="also report FPS/size profile")
    p.add_argument("--deterministic", action="store_true")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score detections against annotations")
    add_common(p)
    p.add_argument("--detections", default=None, help="detections file (single video)")
    p.add_argument("--video", default=None, help="video directory with labels/")
    p.add_argument("--data", default=None, help="dataset root (per-video mode)")
    p.add_argument(
        "--detections-dir", default=None, dest="detections_dir",
        help="directory of <video>.txt detection files (per-video mode)",
    )
    p.add_argument("--thresholds", default=None, help="e.g. 0.2,0.3,0.4,0.5,0.6,0.7,0.8")
    p.add_argument("--size", type=int, default=None, help="inference input size used")
    p.add_argument("--per-video-iou", type=float, default=0.5, dest="per_video_iou")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="dataset statistics report")
    add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--native", action="store_true", help="skip 608x608 normalization")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("synth", help="generate synthetic benchmark suites")
    p.add_argument("--suite", default="all", help="suite name (S1..S5) or 'all'")
    p.add_argument("--out", default="synth_data")
    p.add_argument("--list", action="store_true", help="list suites and exit")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("visualize", help="dump activation heatmaps for one frame")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--frame", type=int, required=True)
    p.set_defaults(func=cmd_visualize)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "eval":
        single = bool(args.detections and args.video)
        batch = bool(args.data and args.detections_dir)
        if single == batch:
            parser.error("eval needs either --detections + --video or --data + --detections-dir")
    try:
        return args.func(args)
    except (MovrecError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
