import numpy as np
import pytest
import torch

from movrec.data import FrameRecord
from movrec.flow import FlowConfig
from movrec.model import build_model, make_variant
from movrec.synth import generate_video, make_textured_background, standard_suites


@pytest.fixture(scope="session")
def suites():
    return standard_suites()


@pytest.fixture(scope="session")
def s1_video(suites):
    return generate_video(suites["S1"], name="S1")


@pytest.fixture(scope="session")
def s2_video(suites):
    return generate_video(suites["S2"], name="S2")


@pytest.fixture(scope="session")
def textured_frame():
    """One 160x160 textured frame for flow tests."""
    return make_textured_background(160, 160, seed=7)


@pytest.fixture(scope="session")
def small_model():
    """Smallest variant, untrained, for shape/inference plumbing tests."""
    torch.manual_seed(0)
    model = build_model(make_variant("v4", (1, 3)), input_size=(96, 96), flow_channels=2)
    model.eval()
    return model


def shifted_frames(background: np.ndarray, dx: int, dy: int = 0):
    """Frame pair where content rigidly displaces by (dx, dy) px."""
    h, w = background.shape[:2]
    margin = max(abs(dx), abs(dy)) + 2
    prev = background[margin : h - margin, margin : w - margin].copy()
    curr = background[margin - dy : h - margin - dy, margin - dx : w - margin - dx].copy()
    return FrameRecord(prev, 0), FrameRecord(curr, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
