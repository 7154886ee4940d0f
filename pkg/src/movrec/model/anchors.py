"""Dense anchor grids and box encoding/decoding.

Anchors are tiled over the five pyramid levels (strides 8..128).  The box
parameterization is center/size log-space deltas with per-coordinate scaling
variances; encode followed by decode is the identity on valid boxes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PYRAMID_STRIDES = (8, 16, 32, 64, 128)
PYRAMID_LEVELS = ("P3", "P4", "P5", "P6", "P7")


@dataclass(frozen=True)
class AnchorConfig:
    """Per-level anchor menu: 3 scales x 3 aspect ratios, base 32 px at P3.

    The base doubles per level.  Small-object variants can shrink
    ``base_size`` to 16 without touching anything else.
    """

    base_size: float = 32.0
    scales: tuple[float, ...] = (1.0, 2 ** (1.0 / 3.0), 2 ** (2.0 / 3.0))
    ratios: tuple[float, ...] = (0.5, 1.0, 2.0)
    variances: tuple[float, float, float, float] = (0.1, 0.1, 0.2, 0.2)

    def __post_init__(self):
        if self.base_size <= 0 or not self.scales or not self.ratios:
            raise ValueError("anchor config must have positive base and non-empty menus")

    @property
    def anchors_per_cell(self) -> int:
        return len(self.scales) * len(self.ratios)


def level_grid_size(input_size: tuple[int, int], stride: int) -> tuple[int, int]:
    """Feature-map shape at a stride: repeated ceil-halving of the input."""
    h, w = input_size
    return (math.ceil(h / stride), math.ceil(w / stride))


def _cell_anchors(base: float, config: AnchorConfig) -> np.ndarray:
    """(A, 2) array of (w, h) for one cell. Ratio is h/w at equal area."""
    out = []
    for ratio in config.ratios:
        for scale in config.scales:
            size = base * scale
            w = size / math.sqrt(ratio)
            h = size * math.sqrt(ratio)
            out.append((w, h))
    return np.asarray(out, dtype=np.float64)


@dataclass(frozen=True)
class AnchorGrid:
    """All anchors for one input size, center-form (cx, cy, w, h) per level."""

    input_size: tuple[int, int]
    config: AnchorConfig
    level_sizes: tuple[tuple[int, int], ...]
    per_level: tuple[np.ndarray, ...]  # each (Ni, 4) center-form
    strides: tuple[int, ...] = PYRAMID_STRIDES

    @property
    def level_counts(self) -> tuple[int, ...]:
        return tuple(a.shape[0] for a in self.per_level)

    @property
    def total(self) -> int:
        return sum(self.level_counts)

    @property
    def centers(self) -> np.ndarray:
        return np.concatenate(self.per_level, axis=0)

    @property
    def corners(self) -> np.ndarray:
        return center_to_corner(self.centers)

    def corners_for_level(self, i: int) -> np.ndarray:
        return center_to_corner(self.per_level[i])


def center_to_corner(boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    half = boxes[..., 2:] / 2.0
    return np.concatenate([boxes[..., :2] - half, boxes[..., :2] + half], axis=-1)


def corner_to_center(boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    wh = boxes[..., 2:] - boxes[..., :2]
    return np.concatenate([boxes[..., :2] + wh / 2.0, wh], axis=-1)


def generate_anchors(
    input_size: tuple[int, int],
    config: AnchorConfig | None = None,
) -> AnchorGrid:
    """Tile anchors over every pyramid level for the given input (H, W).

    Cells are visited row-major; within a cell the (ratio, scale) menu order
    is fixed, matching the prediction-head channel layout.
    """
    config = config or AnchorConfig()
    level_sizes = []
    per_level = []
    for li, stride in enumerate(PYRAMID_STRIDES):
        gh, gw = level_grid_size(input_size, stride)
        level_sizes.append((gh, gw))
        cell = _cell_anchors(config.base_size * (2**li), config)  # (A, 2)
        cy, cx = np.mgrid[0:gh, 0:gw]
        centers = np.stack(
            [(cx + 0.5) * stride, (cy + 0.5) * stride], axis=-1
        ).reshape(-1, 1, 2)  # (HW, 1, 2)
        wh = np.broadcast_to(cell, (centers.shape[0], cell.shape[0], 2))
        anchors = np.concatenate(
            [np.broadcast_to(centers, wh.shape), wh], axis=-1
        ).reshape(-1, 4)
        per_level.append(np.ascontiguousarray(anchors))
    return AnchorGrid(
        input_size=tuple(input_size),
        config=config,
        level_sizes=tuple(level_sizes),
        per_level=tuple(per_level),
    )


def encode_boxes(
    boxes: np.ndarray,
    anchors: np.ndarray,
    variances: tuple[float, float, float, float] = (0.1, 0.1, 0.2, 0.2),
) -> np.ndarray:
    """Regression targets for corner-format ``boxes`` against center-form anchors."""
    g = corner_to_center(boxes)
    a = np.asarray(anchors, dtype=np.float64)
    if np.any(a[..., 2:] <= 0):
        raise ValueError("anchors must have positive extent")
    vx, vy, vw, vh = variances
    tx = (g[..., 0] - a[..., 0]) / a[..., 2] / vx
    ty = (g[..., 1] - a[..., 1]) / a[..., 3] / vy
    tw = np.log(g[..., 2] / a[..., 2]) / vw
    th = np.log(g[..., 3] / a[..., 3]) / vh
    return np.stack([tx, ty, tw, th], axis=-1)


def decode_boxes(
    deltas: np.ndarray,
    anchors: np.ndarray,
    variances: tuple[float, float, float, float] = (0.1, 0.1, 0.2, 0.2),
    clip_to: tuple[int, int] | None = None,
) -> np.ndarray:
    """Invert encode_boxes; optionally clip to a frame (H, W).

    Returns corner-format boxes. Non-finite deltas are rejected.
    """
    deltas = np.asarray(deltas, dtype=np.float64)
    if not np.isfinite(deltas).all():
        raise ValueError("non-finite regression deltas")
    a = np.asarray(anchors, dtype=np.float64)
    vx, vy, vw, vh = variances
    cx = deltas[..., 0] * vx * a[..., 2] + a[..., 0]
    cy = deltas[..., 1] * vy * a[..., 3] + a[..., 1]
    w = np.exp(deltas[..., 2] * vw) * a[..., 2]
    h = np.exp(deltas[..., 3] * vh) * a[..., 3]
    out = np.stack([cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0], axis=-1)
    if clip_to is not None:
        fh, fw = clip_to
        out[..., 0::2] = np.clip(out[..., 0::2], 0.0, fw)
        out[..., 1::2] = np.clip(out[..., 1::2], 0.0, fh)
    return out
