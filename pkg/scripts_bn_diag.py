"""Diagnose BN train/eval gap at mover vs distractor anchors. (not shipped)"""
import numpy as np
import torch

from movrec.flow import FlowConfig, FrameRingBuffer, assemble_asof, build_cascade
from movrec.losses import assign_anchors
from movrec.model import build_model, make_variant
from movrec.synth import generate_video, standard_suites
from movrec.train import TrainConfig, prepare_training_examples, stack_to_tensors, train_step

torch.manual_seed(0)
np.random.seed(0)
suites = standard_suites()
videos = {n: generate_video(suites[n], name=n) for n in ("S1", "S2")}
flow_cfg = FlowConfig(lags=(1, 3), max_displacement=8.0)
examples = prepare_training_examples([v.sequence for v in videos.values()], flow_cfg)
model = build_model(make_variant("v4", (1, 3)), input_size=(256, 256), flow_channels=2)
anchors = model.anchors_for((256, 256))
cfg = TrainConfig(learning_rate=3e-4, max_iterations=2000, max_grad_norm=1.0)
opt = torch.optim.Adam(model.parameters(), lr=3e-4)
rng = np.random.default_rng(0)
order = []
for step in range(150):
    if not order:
        order = list(rng.permutation(len(examples)))
    train_step(model, opt, examples[int(order.pop())], anchors, cfg)

video = videos["S2"]
seq = video.sequence
buf = FrameRingBuffer(capacity=4)
for fr in seq.frames[:11]:
    buf.push(fr)
t = 10
cascade = build_cascade(buf, t, flow_cfg.lags, flow_cfg)
stack = assemble_asof(cascade, buf.get(t), flow_cfg)
flow, image = stack_to_tensors(stack)
mover = video.sprite_states[t][0].box
distractor = video.sprite_states[t][1].box


def best_score(box, train_mode):
    model.train(train_mode)
    with torch.no_grad():
        preds = model(flow, image)
    scores = torch.sigmoid(preds.class_logits[0]).numpy()
    a = assign_anchors(anchors.corners, np.array([box.as_tuple()]), np.array([0]), 0.5, 0.4)
    pos = np.flatnonzero(a.class_targets >= 0)
    return scores[pos].max()


print(
    "flow channels mover/distractor:",
    stack.flow_channels[int(mover.y1) + 16, int(mover.x1) + 16, :].round(3),
    stack.flow_channels[int(distractor.y1) + 16, int(distractor.x1) + 16, :].round(3),
)
for mode_name, train_mode in (("eval-BN", False), ("train-BN", True)):
    sm = best_score(mover, train_mode)
    sd = best_score(distractor, train_mode)
    print(f"{mode_name}: mover best-anchor score {sm:.4f}  distractor {sd:.4f}")
