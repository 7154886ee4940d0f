"""Desk experiment: how fast does v4 overfit S1+S2 at 256? (not shipped)"""
import sys
import time

import numpy as np
import torch

from movrec.evaluate import map_at_iou
from movrec.flow import FlowConfig, FrameRingBuffer
from movrec.infer import InferenceConfig, infer_frame
from movrec.model import build_model, make_variant
from movrec.synth import generate_video, standard_suites
from movrec.train import TrainConfig, prepare_training_examples, train_step

lr = float(sys.argv[1]) if len(sys.argv) > 1 else 1e-3
clip = float(sys.argv[2]) if len(sys.argv) > 2 else 0.0
steps_per_chunk = 250
max_steps = 3000

torch.manual_seed(0)
np.random.seed(0)

suites = standard_suites()
videos = {name: generate_video(suites[name], name=name) for name in ("S1", "S2")}
flow_cfg = FlowConfig(lags=(1, 3))
examples = prepare_training_examples([v.sequence for v in videos.values()], flow_cfg)
print(f"examples: {len(examples)} lr={lr} clip={clip}", flush=True)

variant = make_variant("v4", (1, 3))
model = build_model(variant, input_size=(256, 256), flow_channels=flow_cfg.n_channels)
anchors = model.anchors_for((256, 256))
cfg = TrainConfig(
    learning_rate=lr, max_iterations=max_steps, max_grad_norm=clip if clip > 0 else None
)
opt = torch.optim.Adam(model.parameters(), lr=lr)


def eval_map():
    dets_all, gts_all = [], []
    infer_cfg = InferenceConfig()
    offset = 0
    for name, video in videos.items():
        seq = video.sequence
        buffer = FrameRingBuffer(capacity=4)
        for fr in seq.frames:
            buffer.push(fr)
            if fr.index < 3:
                continue
            dets = infer_frame(model, buffer, fr.index, flow_cfg, infer_cfg)
            for d in dets:
                dets_all.append(type(d)(d.box, d.label, d.score, d.frame_index + offset))
        for a in seq.annotations:
            if a.frame_index >= 3:
                gts_all.append(type(a)(a.box, a.label, a.frame_index + offset))
        offset += 1000
    report = map_at_iou(dets_all, gts_all, 0.5)
    return report.map_value, len(dets_all)


rng = np.random.default_rng(0)
step = 0
t0 = time.time()
while step < max_steps:
    order = rng.permutation(len(examples))
    for i in order:
        lb = train_step(model, opt, examples[int(i)], anchors, cfg)
        step += 1
        if step % steps_per_chunk == 0:
            m, nd = eval_map()
            print(
                f"step {step} loss {lb.total:.4f} mAP50 {m:.4f} ndets {nd} "
                f"({(time.time()-t0)/60:.1f} min)",
                flush=True,
            )
            if m >= 0.95:
                print("converged", flush=True)
                sys.exit(0)
        if step >= max_steps:
            break
print("done without reaching 0.95", flush=True)
