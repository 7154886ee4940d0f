"""Check mover-vs-distractor behavior of the overfit recipe. (not shipped)"""
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

torch.manual_seed(0)
np.random.seed(0)

suites = standard_suites()
videos = {n: generate_video(suites[n], name=n) for n in ("S1", "S2")}
flow_cfg = FlowConfig(lags=(1, 3))
examples = prepare_training_examples([v.sequence for v in videos.values()], flow_cfg)

model = build_model(make_variant("v4", (1, 3)), input_size=(256, 256), flow_channels=2)
anchors = model.anchors_for((256, 256))
cfg = TrainConfig(learning_rate=3e-4, max_iterations=1000, max_grad_norm=1.0)
opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)

rng = np.random.default_rng(0)
step = 0
t0 = time.time()
for chunk in range(4):
    order = rng.permutation(len(examples))
    for i in order:
        train_step(model, opt, examples[int(i)], anchors, cfg)
        step += 1
        if step >= (chunk + 1) * 125:
            break

    # evaluate S2 mover vs distractor
    video = videos["S2"]
    seq = video.sequence
    buffer = FrameRingBuffer(capacity=4)
    mover_hits = 0
    distractor_hits = 0
    n_eval = 0
    dets_all, gts_all = [], []
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
    gts_all = [a for a in seq.annotations if a.frame_index >= 3]
    m = map_at_iou(dets_all, gts_all, 0.5).map_value
    print(
        f"step {step}: S2 mAP {m:.3f} mover {mover_hits}/{n_eval} "
        f"distractor-FP {distractor_hits}/{n_eval} ndets {len(dets_all)} "
        f"({(time.time()-t0)/60:.1f} min)",
        flush=True,
    )
