"""Dense optical flow cascades and motion-saliency input assembly.

Flow is computed between the current frame and history frames at configured
temporal lags.  Each per-lag field is compressed to a single magnitude
channel, clipped and scaled to [0, 1]; the stack of T such channels plus the
normalized current frame form the two network inputs.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import cv2
import numpy as np

from .data import FrameRecord
from .errors import NotEnoughHistory

ALLOWED_LAG_SETS = ((1,), (1, 3), (1, 5), (1, 3, 5))

# ImageNet channel statistics used by the torchvision backbones.
IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


@dataclass(frozen=True)
class FarnebackParams:
    """Polynomial-expansion flow parameters (pinned for reproducibility)."""

    pyramid_scale: float = 0.5
    levels: int = 3
    window_size: int = 15
    iterations: int = 3
    poly_n: int = 5
    poly_sigma: float = 1.2


@dataclass(frozen=True)
class FlowConfig:
    lags: tuple[int, ...] = (1, 3, 5)
    max_displacement: float = 32.0
    backend: str = "farneback"
    keep_uv: bool = False
    farneback: FarnebackParams = field(default_factory=FarnebackParams)

    def __post_init__(self):
        lags = tuple(self.lags)
        if not lags or any(l < 1 for l in lags) or list(lags) != sorted(set(lags)):
            raise ValueError(f"lags must be distinct, >= 1 and strictly increasing: {lags}")
        object.__setattr__(self, "lags", lags)
        if self.max_displacement <= 0:
            raise ValueError("max_displacement must be positive")

    @property
    def n_channels(self) -> int:
        """Channels of the flow input tensor: T, or 2T when (u, v) are kept."""
        t = len(self.lags)
        return 2 * t if self.keep_uv else t


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement from the earlier frame to the current one."""

    u: np.ndarray
    v: np.ndarray
    lag: int

    def __post_init__(self):
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise ValueError(f"u/v must be matching 2-D arrays: {self.u.shape} {self.v.shape}")
        if self.lag < 1:
            raise ValueError(f"lag must be >= 1, got {self.lag}")
        if not (np.isfinite(self.u).all() and np.isfinite(self.v).all()):
            raise ValueError("flow field contains non-finite values")

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


@dataclass(frozen=True)
class FlowCascade:
    maps: tuple[FlowField, ...]
    lags: tuple[int, ...]

    def __post_init__(self):
        if len(self.maps) != len(self.lags):
            raise ValueError("one flow field per lag is required")
        if list(self.lags) != sorted(set(self.lags)):
            raise ValueError(f"lags must be distinct and strictly increasing: {self.lags}")
        for m, l in zip(self.maps, self.lags):
            if m.lag != l:
                raise ValueError(f"field lag {m.lag} does not match cascade lag {l}")

    def __len__(self) -> int:
        return len(self.maps)


@dataclass(frozen=True)
class MotionSaliencyStack:
    """The two network inputs: flow saliency channels + current frame."""

    flow_channels: np.ndarray  # H*W*C float32 in [0, 1]
    frame_channels: np.ndarray  # H*W*3 float32, backbone-normalized

    def __post_init__(self):
        if self.flow_channels.shape[:2] != self.frame_channels.shape[:2]:
            raise ValueError("flow and frame channels must share spatial shape")


class FrameRingBuffer:
    """Bounded buffer of the most recent frames, keyed by frame index.

    Single writer (the stream reader) pushes in index order; reads are safe
    once a push returns.  Capacity defaults to max lag 5 + 1.
    """

    def __init__(self, capacity: int = 6):
        if capacity < 2:
            raise ValueError("capacity must be at least 2")
        self.capacity = capacity
        self._frames: OrderedDict[int, FrameRecord] = OrderedDict()

    def push(self, frame: FrameRecord) -> None:
        if self._frames:
            last = next(reversed(self._frames))
            if frame.index <= last:
                raise ValueError(f"frames must be pushed in increasing order ({frame.index} after {last})")
        self._frames[frame.index] = frame
        while len(self._frames) > self.capacity:
            self._frames.popitem(last=False)

    def get(self, index: int) -> FrameRecord:
        try:
            return self._frames[index]
        except KeyError:
            raise NotEnoughHistory(index) from None

    def __contains__(self, index: int) -> bool:
        return index in self._frames

    def __len__(self) -> int:
        return len(self._frames)

    @property
    def latest_index(self) -> int | None:
        return next(reversed(self._frames)) if self._frames else None


def _luminance(pixels: np.ndarray) -> np.ndarray:
    # ITU-R 601 weights; matches cv2's RGB2GRAY conversion.
    return cv2.cvtColor(pixels, cv2.COLOR_RGB2GRAY)


def _farneback_flow(prev_gray, curr_gray, p: FarnebackParams) -> np.ndarray:
    return cv2.calcOpticalFlowFarneback(
        prev_gray,
        curr_gray,
        None,
        p.pyramid_scale,
        p.levels,
        p.window_size,
        p.iterations,
        p.poly_n,
        p.poly_sigma,
        0,
    )


FLOW_BACKENDS = {"farneback": _farneback_flow}


def compute_dense_flow(
    prev: FrameRecord,
    curr: FrameRecord,
    config: FlowConfig | None = None,
    lag: int | None = None,
) -> FlowField:
    """Dense per-pixel displacement from ``prev`` to ``curr``."""
    config = config or FlowConfig()
    if prev.size != curr.size:
        raise ValueError(f"frame shapes differ: {prev.size} vs {curr.size}")
    try:
        backend = FLOW_BACKENDS[config.backend]
    except KeyError:
        raise ValueError(f"unknown flow backend {config.backend!r}") from None
    flow = backend(_luminance(prev.pixels), _luminance(curr.pixels), config.farneback)
    flow = np.nan_to_num(flow, nan=0.0, posinf=0.0, neginf=0.0)
    if lag is None:
        lag = max(1, curr.index - prev.index)
    return FlowField(u=flow[..., 0].astype(np.float32), v=flow[..., 1].astype(np.float32), lag=lag)


def build_cascade(
    buffer: FrameRingBuffer,
    t: int,
    lags,
    config: FlowConfig | None = None,
) -> FlowCascade:
    """Flow fields between frame t and each of frames t - lag.

    Reads only buffered frames; raises NotEnoughHistory naming the first
    missing index (callers warm up for max(lags) frames at stream start).
    """
    lags = tuple(lags)
    curr = buffer.get(t)
    maps = []
    for lag in lags:
        prev = buffer.get(t - lag)
        maps.append(compute_dense_flow(prev, curr, config, lag=lag))
    return FlowCascade(maps=tuple(maps), lags=lags)


def normalize_frame(pixels: np.ndarray) -> np.ndarray:
    """Scale uint8 RGB to the backbone's expected float input."""
    return ((pixels.astype(np.float32) / 255.0) - IMAGENET_MEAN) / IMAGENET_STD


def assemble_asof(
    cascade: FlowCascade,
    frame: FrameRecord,
    config: FlowConfig | None = None,
) -> MotionSaliencyStack:
    """Assemble the motion-saliency input from a cascade and the current frame.

    Each flow field contributes one channel: magnitude clipped at
    ``max_displacement`` and scaled to [0, 1].  With ``keep_uv`` the signed
    (u, v) components are kept instead (two channels per lag, in [-1, 1]
    before the shift to [0, 1] is skipped -- components are scaled by the
    same clip so direction is preserved).
    """
    config = config or FlowConfig(lags=cascade.lags)
    h, w = frame.size
    channels = []
    for fl in cascade.maps:
        if fl.u.shape != (h, w):
            raise ValueError(f"flow shape {fl.u.shape} does not match frame {frame.size}")
        if config.keep_uv:
            clip = config.max_displacement
            channels.append(np.clip(fl.u, -clip, clip) / clip)
            channels.append(np.clip(fl.v, -clip, clip) / clip)
        else:
            mag = fl.magnitude
            channels.append(np.clip(mag, 0.0, config.max_displacement) / config.max_displacement)
    flow_channels = np.stack(channels, axis=-1).astype(np.float32)
    return MotionSaliencyStack(
        flow_channels=flow_channels,
        frame_channels=normalize_frame(frame.pixels),
    )


def flow_debug_images(stack: MotionSaliencyStack) -> list[np.ndarray]:
    """Flow channels as 8-bit grayscale images, for debug dumps."""
    out = []
    for c in range(stack.flow_channels.shape[-1]):
        ch = stack.flow_channels[..., c]
        ch = (ch - ch.min()) if ch.min() < 0 else ch
        out.append(np.clip(ch * 255.0, 0, 255).astype(np.uint8))
    return out
