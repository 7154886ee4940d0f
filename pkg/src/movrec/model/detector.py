"""The moving-object detector family: dual- or single-stream variants.

v1/v2 use the residual-50 backbone, v3/v4 the mobile-inverted-v2 one.  The
dual-stream variants (v1/v3) run separate backbones over the flow-saliency
tensor and the current frame and concatenate their stage outputs at matching
scales; v2/v4 drop the parallel frame branch and instead consume the flow
channels concatenated with the frame as a single (T+3)-channel input, so
appearance information is assimilated rather than discarded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from ..errors import ConfigError
from .anchors import AnchorConfig, AnchorGrid, generate_anchors
from .backbones import build_backbone
from .fpn import FeaturePyramid, PyramidNetwork

VARIANT_NAMES = ("v1", "v2", "v3", "v4")

_VARIANT_TABLE = {
    "v1": ("resnet50", True),
    "v2": ("resnet50", False),
    "v3": ("mobilenetv2", True),
    "v4": ("mobilenetv2", False),
}


@dataclass(frozen=True)
class BackboneSpec:
    family: str
    pretrained: bool = False

    def __post_init__(self):
        if self.family not in ("resnet50", "mobilenetv2"):
            raise ConfigError(f"unknown backbone family {self.family!r}")


@dataclass(frozen=True)
class ModelVariant:
    version: str
    backbone: BackboneSpec
    dual_stream: bool
    lags: tuple[int, ...]

    def __post_init__(self):
        if self.version not in VARIANT_NAMES:
            raise ConfigError(f"unknown variant {self.version!r}")
        family, dual = _VARIANT_TABLE[self.version]
        if self.backbone.family != family or self.dual_stream != dual:
            raise ConfigError(
                f"variant {self.version} requires backbone={family} dual_stream={dual}"
            )
        object.__setattr__(self, "lags", tuple(self.lags))

    @property
    def n_lags(self) -> int:
        return len(self.lags)


def make_variant(version: str, lags, pretrained: bool = False) -> ModelVariant:
    """Build a ModelVariant with the backbone/stream pairing the version fixes."""
    if version not in _VARIANT_TABLE:
        raise ConfigError(f"unknown variant {version!r} (expected one of {VARIANT_NAMES})")
    family, dual = _VARIANT_TABLE[version]
    return ModelVariant(
        version=version,
        backbone=BackboneSpec(family=family, pretrained=pretrained),
        dual_stream=dual,
        lags=tuple(lags),
    )


def fuse_msf(flow_features, frame_features=None):
    """Channel-concatenate per-scale features of the two streams.

    For the single-stream variants ``frame_features`` is None and the input
    passes through unchanged.
    """
    if frame_features is None:
        return tuple(flow_features)
    fused = []
    for a, b in zip(flow_features, frame_features):
        if a.shape[-2:] != b.shape[-2:]:
            raise ValueError(
                f"stream features disagree on spatial shape: {tuple(a.shape)} vs {tuple(b.shape)}"
            )
        fused.append(torch.cat([a, b], dim=1))
    return tuple(fused)


class PredictionHead(nn.Module):
    """Dense subnet shared across pyramid levels: 4 convs + a final projector."""

    def __init__(
        self,
        in_channels: int,
        anchors_per_cell: int,
        outputs_per_anchor: int,
        depth: int = 4,
        width: int = 256,
        prior_probability: float | None = None,
    ):
        super().__init__()
        layers = []
        prev = in_channels
        for _ in range(depth):
            layers += [nn.Conv2d(prev, width, 3, padding=1), nn.ReLU(inplace=True)]
            prev = width
        self.tower = nn.Sequential(*layers)
        self.project = nn.Conv2d(prev, anchors_per_cell * outputs_per_anchor, 3, padding=1)
        self.outputs_per_anchor = outputs_per_anchor
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.normal_(m.weight, std=0.01)
                nn.init.zeros_(m.bias)
        if prior_probability is not None:
            # Start every anchor near the background prior to keep the focal
            # loss stable in the first iterations.
            bias = -math.log((1.0 - prior_probability) / prior_probability)
            nn.init.constant_(self.project.bias, bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Returns (B, H*W*A, outputs_per_anchor)."""
        out = self.project(self.tower(x))
        b = out.shape[0]
        return out.permute(0, 2, 3, 1).reshape(b, -1, self.outputs_per_anchor)


@dataclass
class RawPredictions:
    """Per-level dense outputs plus their concatenation over levels."""

    class_logits: torch.Tensor  # (B, N, K)
    box_deltas: torch.Tensor  # (B, N, 4)
    level_counts: tuple[int, ...]

    def __post_init__(self):
        if self.class_logits.shape[1] != self.box_deltas.shape[1]:
            raise ValueError("logits and deltas disagree on anchor count")
        if sum(self.level_counts) != self.class_logits.shape[1]:
            raise ValueError("level counts do not sum to the anchor dimension")

    def split_levels(self):
        cls = torch.split(self.class_logits, self.level_counts, dim=1)
        reg = torch.split(self.box_deltas, self.level_counts, dim=1)
        return list(zip(cls, reg))


class MotionSaliencyDetector(nn.Module):
    """Single-stage pyramid detector over motion-saliency inputs."""

    def __init__(
        self,
        variant: ModelVariant,
        num_classes: int = 2,
        anchor_config: AnchorConfig | None = None,
        flow_channels: int | None = None,
        head_depth: int = 4,
        head_width: int = 256,
        prior_probability: float = 0.01,
    ):
        super().__init__()
        self.variant = variant
        self.num_classes = num_classes
        self.anchor_config = anchor_config or AnchorConfig()
        self.flow_channels = flow_channels if flow_channels is not None else variant.n_lags
        pretrained = variant.backbone.pretrained
        family = variant.backbone.family
        if variant.dual_stream:
            self.flow_backbone = build_backbone(family, self.flow_channels, pretrained)
            self.frame_backbone = build_backbone(family, 3, pretrained)
            fused = tuple(
                a + b
                for a, b in zip(self.flow_backbone.out_channels, self.frame_backbone.out_channels)
            )
        else:
            self.flow_backbone = build_backbone(family, self.flow_channels + 3, pretrained)
            self.frame_backbone = None
            fused = self.flow_backbone.out_channels
        self.fused_channels = fused
        self.fpn = PyramidNetwork(fused, out_channels=head_width)
        a = self.anchor_config.anchors_per_cell
        self.class_head = PredictionHead(
            head_width, a, num_classes, head_depth, head_width, prior_probability
        )
        self.box_head = PredictionHead(head_width, a, 4, head_depth, head_width)
        self._anchor_cache: dict[tuple[int, int], AnchorGrid] = {}

    # -- feature extraction -------------------------------------------------

    def forward_features(self, flow: torch.Tensor, frame: torch.Tensor) -> FeaturePyramid:
        if flow.shape[-2:] != frame.shape[-2:]:
            raise ValueError("flow and frame tensors disagree on spatial shape")
        if self.variant.dual_stream:
            fused = fuse_msf(self.flow_backbone(flow), self.frame_backbone(frame))
        else:
            fused = fuse_msf(self.flow_backbone(torch.cat([flow, frame], dim=1)))
        return self.fpn(*fused)

    def forward(self, flow: torch.Tensor, frame: torch.Tensor) -> RawPredictions:
        pyramid = self.forward_features(flow, frame)
        cls_levels, reg_levels, counts = [], [], []
        for level in pyramid:
            cls = self.class_head(level)
            reg = self.box_head(level)
            cls_levels.append(cls)
            reg_levels.append(reg)
            counts.append(cls.shape[1])
        return RawPredictions(
            class_logits=torch.cat(cls_levels, dim=1),
            box_deltas=torch.cat(reg_levels, dim=1),
            level_counts=tuple(counts),
        )

    # -- anchors and bookkeeping -------------------------------------------

    def anchors_for(self, input_size: tuple[int, int]) -> AnchorGrid:
        key = tuple(input_size)
        if key not in self._anchor_cache:
            self._anchor_cache[key] = generate_anchors(key, self.anchor_config)
        return self._anchor_cache[key]

    @property
    def num_parameters(self) -> int:
        return count_parameters(self)


def count_parameters(model: nn.Module) -> int:
    """Trainable parameter count."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def build_model(
    variant: ModelVariant,
    input_size: tuple[int, int] = (608, 608),
    num_classes: int = 2,
    anchor_config: AnchorConfig | None = None,
    flow_channels: int | None = None,
    head_depth: int = 4,
    head_width: int = 256,
) -> MotionSaliencyDetector:
    """Construct a detector and pre-generate its anchor grid for ``input_size``."""
    model = MotionSaliencyDetector(
        variant,
        num_classes=num_classes,
        anchor_config=anchor_config,
        flow_channels=flow_channels,
        head_depth=head_depth,
        head_width=head_width,
    )
    model.anchors_for(tuple(input_size))
    return model
