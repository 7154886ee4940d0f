"""Diagnose distractor FPs: BN train/eval gap, lr schedule effects. (not shipped)"""
import sys
import time

import numpy as np
import torch

from movrec.evaluate import map_at_iou
from movrec.flow import FlowConfig, FrameRingBuffer
from movrec.geometry import iou
from movrec.infer import InferenceConfig, infer_frame
from movrec.model import build_model, make_variant
from movrec.synth import generate_video, standard_suites
from movrec.train import TrainConfig, prepare_training_examples, train_step

mode = sys.argv[1] if len(sys.argv) > 1 else "lr1e-4"

torch.manual_seed(0)
np.random.seed(0)

suites = standard_suites()
videos = {n: generate_video(suites[n], name=n) for n in ("S1", "S2")}
flow_cfg = FlowConfig(lags=(1, 3))
examples = prepare_training_examples([v.sequence for v in videos.values()], flow_cfg)

model = build_model(make_variant("v4", (1, 3)), input_size=(256, 256), flow_channels=2)
anchors = model.anchors_for((256, 256))

if mode == "lr1e-4":
    lrs = {0: 1e-4}
elif mode == "decay":
    lrs = {0: 3e-4, 150: 5e-5}
elif mode == "bnm":
    lrs = {0: 3e-4}
    for m in model.modules():
        if isinstance(m, torch.nn.BatchNorm2d):
            m.momentum = 0.02
else:
    lrs = {0: 3e-4}

cfg = TrainConfig(learning_rate=lrs[0], max_iterations=1000, max_grad_norm=1.0)
opt = torch.optim.Adam(model.parameters(), lr=lrs[0])


def eval_s2(tag):
    video = videos["S2"]
    seq = video.sequence
    buffer = FrameRingBuffer(capacity=4)
    mover_hits = distractor_hits = n_eval = 0
    dets_all = []
    for fr in seq.frames:
        buffer.push(fr)
        if fr.index < 3:
            continue
        n_eval += 1
        dets = infer_frame(model, buffer, fr.index, flow_cfg, InferenceConfig())
        dets_all.extend(dets)
        states = video.sprite_states[fr.index]
        mover_box = next(s.box for s in states if s.moving)
        distractor_box = next(s.box for s in states if not s.moving)
        if any(d.score >= 0.5 and iou(d.box, mover_box) >= 0.5 for d in dets):
            mover_hits += 1
        if any(d.score >= 0.5 and iou(d.box, distractor_box) >= 0.5 for d in dets):
            distractor_hits += 1
    gts = [a for a in seq.annotations if a.frame_index >= 3]
    m = map_at_iou(dets_all, gts, 0.5).map_value if dets_all else 0.0
    print(f"  [{tag}] mAP {m:.3f} mover {mover_hits}/{n_eval} distractorFP {distractor_hits}/{n_eval}", flush=True)
    return mover_hits, distractor_hits, n_eval


rng = np.random.default_rng(0)
step = 0
t0 = time.time()
order = []
while step < 500:
    if not order:
        order = list(rng.permutation(len(examples)))
    i = order.pop()
    if step in lrs:
        for g in opt.param_groups:
            g["lr"] = lrs[step]
    train_step(model, opt, examples[int(i)], anchors, cfg)
    step += 1
    if step % 50 == 0:
        print(f"step {step} ({(time.time()-t0)/60:.1f} min)", flush=True)
        eval_s2("eval-bn")
