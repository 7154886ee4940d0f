"""Probe: flow contrast (max_displacement) + BN train/eval gap. (not shipped)"""
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

max_disp = float(sys.argv[1]) if len(sys.argv) > 1 else 8.0
lr = float(sys.argv[2]) if len(sys.argv) > 2 else 3e-4

torch.manual_seed(0)
np.random.seed(0)

suites = standard_suites()
videos = {n: generate_video(suites[n], name=n) for n in ("S1", "S2")}
flow_cfg = FlowConfig(lags=(1, 3), max_displacement=max_disp)
examples = prepare_training_examples([v.sequence for v in videos.values()], flow_cfg)
print(f"max_disp={max_disp} lr={lr}", flush=True)

from movrec.train import recalibrate_batchnorm, set_bn_eval  # noqa: E402

model = build_model(make_variant("v4", (1, 3)), input_size=(256, 256), flow_channels=2)
anchors = model.anchors_for((256, 256))
freeze_at = 100
cfg = TrainConfig(learning_rate=lr, max_iterations=2000, max_grad_norm=1.0)
opt = torch.optim.Adam(model.parameters(), lr=lr)


def eval_s2(train_bn=False):
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
        if train_bn:
            # infer_frame sets eval(); redo forward in train-mode BN
            pass
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
    return m, mover_hits, distractor_hits, n_eval


rng = np.random.default_rng(0)
step = 0
t0 = time.time()
order = []
frozen = False
while step < 700:
    if not order:
        order = list(rng.permutation(len(examples)))
    i = order.pop()
    if step == freeze_at and not frozen:
        recalibrate_batchnorm(model, examples)
        frozen = True
        print(f"froze BN at step {step}", flush=True)
    train_step(model, opt, examples[int(i)], anchors, cfg, bn_frozen=frozen)
    step += 1
    if step % 50 == 0:
        m, mh, dh, n = eval_s2()
        print(
            f"step {step}: mAP {m:.3f} mover {mh}/{n} distractorFP {dh}/{n} "
            f"({(time.time()-t0)/60:.1f} min)",
            flush=True,
        )
