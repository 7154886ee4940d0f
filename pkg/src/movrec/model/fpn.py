"""Five-level feature pyramid over the fused backbone stages."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .anchors import PYRAMID_LEVELS, PYRAMID_STRIDES


@dataclass(frozen=True)
class FeaturePyramid:
    """P3..P7 feature maps, all sharing the same channel width."""

    levels: "OrderedDict[str, torch.Tensor]"

    def __post_init__(self):
        if tuple(self.levels.keys()) != PYRAMID_LEVELS:
            raise ValueError(f"expected levels {PYRAMID_LEVELS}, got {tuple(self.levels)}")
        widths = {t.shape[1] for t in self.levels.values()}
        if len(widths) != 1:
            raise ValueError(f"pyramid levels must share channel width, got {widths}")

    @property
    def channels(self) -> int:
        return next(iter(self.levels.values())).shape[1]

    @property
    def strides(self) -> tuple[int, ...]:
        return PYRAMID_STRIDES

    def __iter__(self):
        return iter(self.levels.values())

    def __getitem__(self, key: str) -> torch.Tensor:
        return self.levels[key]


class PyramidNetwork(nn.Module):
    """Top-down pyramid: lateral 1x1 projections, upsample-add, 3x3 smoothing.

    P6 comes from a stride-2 convolution on C5 and P7 from a stride-2
    convolution on the activated P6, so five strides {8,16,32,64,128} are
    produced from three backbone stages.
    """

    def __init__(self, in_channels: tuple[int, int, int], out_channels: int = 256):
        super().__init__()
        c3, c4, c5 = in_channels
        self.lateral3 = nn.Conv2d(c3, out_channels, 1)
        self.lateral4 = nn.Conv2d(c4, out_channels, 1)
        self.lateral5 = nn.Conv2d(c5, out_channels, 1)
        self.out3 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.out4 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.out5 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.out6 = nn.Conv2d(c5, out_channels, 3, stride=2, padding=1)
        self.out7 = nn.Conv2d(out_channels, out_channels, 3, stride=2, padding=1)
        self.out_channels = out_channels

    def forward(self, c3, c4, c5) -> FeaturePyramid:
        m5 = self.lateral5(c5)
        m4 = self.lateral4(c4) + F.interpolate(m5, size=c4.shape[-2:], mode="nearest")
        m3 = self.lateral3(c3) + F.interpolate(m4, size=c3.shape[-2:], mode="nearest")
        p3 = self.out3(m3)
        p4 = self.out4(m4)
        p5 = self.out5(m5)
        p6 = self.out6(c5)
        p7 = self.out7(F.relu(p6))
        return FeaturePyramid(
            levels=OrderedDict(zip(PYRAMID_LEVELS, (p3, p4, p5, p6, p7)))
        )
