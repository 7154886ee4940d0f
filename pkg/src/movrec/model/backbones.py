"""Backbone stage extraction: residual-50 and mobile-inverted-v2 families.

Each backbone exposes the three stage outputs (C3, C4, C5) at spatial strides
exactly 8, 16 and 32 relative to the input tensor.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torchvision

from ..errors import PretrainedWeightsError

BACKBONE_FAMILIES = ("resnet50", "mobilenetv2")


def _adapt_first_conv(conv: nn.Conv2d, in_channels: int, pretrained: bool) -> nn.Conv2d:
    """Rebuild the stem conv for a non-3-channel input.

    With pretrained weights, the RGB kernels are averaged over the channel
    axis, replicated to the new count and scaled by 3/new_count so activation
    magnitude is preserved.
    """
    if in_channels == conv.in_channels:
        return conv
    new = nn.Conv2d(
        in_channels,
        conv.out_channels,
        kernel_size=conv.kernel_size,
        stride=conv.stride,
        padding=conv.padding,
        bias=conv.bias is not None,
    )
    if pretrained:
        with torch.no_grad():
            mean = conv.weight.mean(dim=1, keepdim=True)
            new.weight.copy_(mean.repeat(1, in_channels, 1, 1) * (3.0 / in_channels))
            if conv.bias is not None:
                new.bias.copy_(conv.bias)
    return new


def _load_torchvision_model(factory, pretrained: bool, weights_enum):
    if not pretrained:
        return factory(weights=None)
    try:
        return factory(weights=weights_enum)
    except Exception as exc:
        raise PretrainedWeightsError(
            f"could not load pretrained weights for {factory.__name__}: {exc}"
        ) from exc


class ResNetStages(nn.Module):
    """ResNet-50 trunk returning (C3, C4, C5) with 512/1024/2048 channels."""

    out_channels = (512, 1024, 2048)

    def __init__(self, in_channels: int = 3, pretrained: bool = False):
        super().__init__()
        net = _load_torchvision_model(
            torchvision.models.resnet50,
            pretrained,
            torchvision.models.ResNet50_Weights.IMAGENET1K_V1,
        )
        net.conv1 = _adapt_first_conv(net.conv1, in_channels, pretrained)
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
        self.layer1 = net.layer1
        self.layer2 = net.layer2
        self.layer3 = net.layer3
        self.layer4 = net.layer4

    def forward(self, x):
        x = self.stem(x)
        x = self.layer1(x)
        c3 = self.layer2(x)
        c4 = self.layer3(c3)
        c5 = self.layer4(c4)
        return c3, c4, c5


class MobileNetStages(nn.Module):
    """MobileNetV2 trunk returning (C3, C4, C5) with 32/96/1280 channels."""

    out_channels = (32, 96, 1280)

    def __init__(self, in_channels: int = 3, pretrained: bool = False):
        super().__init__()
        net = _load_torchvision_model(
            torchvision.models.mobilenet_v2,
            pretrained,
            torchvision.models.MobileNet_V2_Weights.IMAGENET1K_V1,
        )
        features = net.features
        features[0][0] = _adapt_first_conv(features[0][0], in_channels, pretrained)
        # Stride-8/16/32 boundaries of the inverted-residual stack.
        self.stage3 = features[:7]
        self.stage4 = features[7:14]
        self.stage5 = features[14:19]

    def forward(self, x):
        c3 = self.stage3(x)
        c4 = self.stage4(c3)
        c5 = self.stage5(c4)
        return c3, c4, c5


def build_backbone(family: str, in_channels: int, pretrained: bool) -> nn.Module:
    if family == "resnet50":
        return ResNetStages(in_channels, pretrained)
    if family == "mobilenetv2":
        return MobileNetStages(in_channels, pretrained)
    raise ValueError(f"unknown backbone family {family!r}")
