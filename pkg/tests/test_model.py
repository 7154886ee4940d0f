from collections import Counter

import numpy as np
import pytest
import torch

from movrec.errors import ConfigError, PretrainedWeightsError
from movrec.model import (
    build_model,
    count_parameters,
    fuse_msf,
    generate_anchors,
    make_variant,
)
from movrec.model.backbones import MobileNetStages, ResNetStages, build_backbone
from movrec.model.detector import BackboneSpec, ModelVariant
from movrec.model.fpn import PyramidNetwork


class TestVariants:
    def test_pairings(self):
        assert make_variant("v1", (1,)).backbone.family == "resnet50"
        assert make_variant("v1", (1,)).dual_stream
        assert not make_variant("v2", (1,)).dual_stream
        assert make_variant("v3", (1,)).backbone.family == "mobilenetv2"
        assert not make_variant("v4", (1,)).dual_stream

    def test_wrong_pairing_rejected(self):
        with pytest.raises(ConfigError):
            ModelVariant("v1", BackboneSpec("mobilenetv2"), True, (1,))
        with pytest.raises(ConfigError):
            ModelVariant("v2", BackboneSpec("resnet50"), True, (1,))

    def test_unknown_version(self):
        with pytest.raises(ConfigError):
            make_variant("v5", (1,))


class TestBackbones:
    def test_resnet_strides(self):
        net = ResNetStages(in_channels=2)
        c3, c4, c5 = net(torch.zeros(1, 2, 96, 96))
        assert c3.shape == (1, 512, 12, 12)
        assert c4.shape == (1, 1024, 6, 6)
        assert c5.shape == (1, 2048, 3, 3)

    def test_mobilenet_strides(self):
        net = MobileNetStages(in_channels=5)
        c3, c4, c5 = net(torch.zeros(1, 5, 96, 96))
        assert c3.shape == (1, 32, 12, 12)
        assert c4.shape == (1, 96, 6, 6)
        assert c5.shape == (1, 1280, 3, 3)

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            build_backbone("vgg", 3, False)

    def test_pretrained_failure_is_explicit(self, monkeypatch):
        def boom(*args, **kwargs):
            raise OSError("no network")

        monkeypatch.setattr(torch.hub, "load_state_dict_from_url", boom)
        with pytest.raises(PretrainedWeightsError):
            ResNetStages(in_channels=3, pretrained=True)

    def test_first_conv_adaptation_preserves_magnitude(self, monkeypatch):
        # fake "pretrained" weights: averaged-and-replicated kernels keep the
        # response to a gray image identical for any input channel count
        conv = torch.nn.Conv2d(3, 8, 7, stride=2, padding=3, bias=False)
        torch.nn.init.normal_(conv.weight)
        from movrec.model.backbones import _adapt_first_conv

        new = _adapt_first_conv(conv, 5, pretrained=True)
        gray3 = torch.ones(1, 3, 16, 16) * 0.7
        gray5 = torch.ones(1, 5, 16, 16) * 0.7
        torch.testing.assert_close(conv(gray3), new(gray5), atol=1e-5, rtol=1e-5)


class TestFuse:
    def test_concatenates_channels(self):
        a = [torch.zeros(1, 512, 8, 8), torch.zeros(1, 1024, 4, 4), torch.zeros(1, 2048, 2, 2)]
        b = [torch.ones(1, 512, 8, 8), torch.ones(1, 1024, 4, 4), torch.ones(1, 2048, 2, 2)]
        fused = fuse_msf(a, b)
        assert fused[0].shape == (1, 1024, 8, 8)
        assert fused[2].shape == (1, 4096, 2, 2)

    def test_zero_flow_stream_occupies_first_half(self):
        a = [torch.zeros(1, 4, 8, 8)]
        b = [torch.ones(1, 4, 8, 8)]
        fused = fuse_msf(a, b)
        assert torch.all(fused[0][:, :4] == 0)
        assert torch.all(fused[0][:, 4:] == 1)

    def test_single_stream_identity(self):
        a = [torch.randn(1, 8, 4, 4)]
        fused = fuse_msf(a, None)
        assert fused[0] is a[0]

    def test_scale_mismatch_rejected(self):
        with pytest.raises(ValueError):
            fuse_msf([torch.zeros(1, 4, 8, 8)], [torch.zeros(1, 4, 4, 4)])


class TestPyramid:
    def test_level_shapes_608(self):
        fpn = PyramidNetwork((8, 16, 32), out_channels=256)
        c3 = torch.randn(1, 8, 76, 76)
        c4 = torch.randn(1, 16, 38, 38)
        c5 = torch.randn(1, 32, 19, 19)
        pyr = fpn(c3, c4, c5)
        shapes = {k: tuple(v.shape[-2:]) for k, v in pyr.levels.items()}
        assert shapes == {
            "P3": (76, 76),
            "P4": (38, 38),
            "P5": (19, 19),
            "P6": (10, 10),
            "P7": (5, 5),
        }
        assert pyr.channels == 256

    def test_constant_input_constant_interior(self):
        fpn = PyramidNetwork((4, 4, 4), out_channels=16)
        fpn.eval()
        c3 = torch.full((1, 4, 32, 32), 0.5)
        c4 = torch.full((1, 4, 16, 16), -0.25)
        c5 = torch.full((1, 4, 8, 8), 1.5)
        pyr = fpn(c3, c4, c5)
        for name, level in pyr.levels.items():
            interior = level[..., 2:-2, 2:-2]
            if interior.numel() == 0:
                continue
            spread = (interior.amax(dim=(-2, -1)) - interior.amin(dim=(-2, -1))).abs().max()
            assert float(spread) < 1e-5, name


class TestBuildModel:
    def test_forward_shape_contract(self, small_model):
        grid = small_model.anchors_for((96, 96))
        out = small_model(torch.zeros(1, 2, 96, 96), torch.zeros(1, 3, 96, 96))
        assert out.class_logits.shape == (1, grid.total, 2)
        assert out.box_deltas.shape == (1, grid.total, 4)
        assert out.level_counts == grid.level_counts

    @pytest.mark.parametrize("lags", [(1,), (1, 3), (1, 3, 5)])
    def test_shape_contract_across_T(self, lags):
        t = len(lags)
        model = build_model(make_variant("v4", lags), input_size=(96, 96), flow_channels=t)
        grid = generate_anchors((96, 96))
        out = model(torch.zeros(1, t, 96, 96), torch.zeros(1, 3, 96, 96))
        assert out.class_logits.shape[1] == grid.total

    def test_dual_stream_forward(self):
        model = build_model(make_variant("v3", (1,)), input_size=(96, 96), flow_channels=1)
        out = model(torch.zeros(1, 1, 96, 96), torch.zeros(1, 3, 96, 96))
        assert out.class_logits.shape[1] == generate_anchors((96, 96)).total

    def test_parameter_count_deterministic(self):
        a = build_model(make_variant("v4", (1, 3)), input_size=(96, 96), flow_channels=2)
        b = build_model(make_variant("v4", (1, 3)), input_size=(96, 96), flow_channels=2)
        assert count_parameters(a) == count_parameters(b)

    def test_flow_channel_count_changes_only_first_conv(self):
        m1 = build_model(make_variant("v1", (1,)), input_size=(96, 96), flow_channels=1)
        m3 = build_model(make_variant("v1", (1, 3, 5)), input_size=(96, 96), flow_channels=3)
        # 7x7 stem with 64 outputs: delta = 7*7*64 per extra input channel
        assert count_parameters(m3) - count_parameters(m1) == 7 * 7 * 64 * 2

    def test_v1_without_frame_branch_matches_v2_layer_multiset(self):
        v1 = build_model(make_variant("v1", (1, 3)), input_size=(96, 96), flow_channels=2)
        v2 = build_model(make_variant("v2", (1, 3)), input_size=(96, 96), flow_channels=2)
        v1_types = Counter(
            type(m).__name__
            for name, m in v1.named_modules()
            if not name.startswith("frame_backbone")
        )
        v2_types = Counter(type(m).__name__ for _, m in v2.named_modules())
        assert v1_types == v2_types

    def test_prior_probability_bias(self, small_model):
        out = small_model(torch.zeros(1, 2, 96, 96), torch.zeros(1, 3, 96, 96))
        probs = torch.sigmoid(out.class_logits)
        # fresh model predicts foreground at roughly the 0.01 prior
        assert float(probs.mean()) < 0.05

    def test_pyramid_stride_shift(self):
        # shifting the input by 8 px shifts P3 responses by exactly one cell
        torch.manual_seed(1)
        model = build_model(make_variant("v4", (1,)), input_size=(128, 128), flow_channels=1)
        model.eval()
        flow = torch.zeros(1, 1, 128, 128)
        frame = torch.zeros(1, 3, 128, 128)
        frame[0, :, 60, 60] = 5.0  # delta impulse
        shifted = torch.zeros_like(frame)
        shifted[0, :, 60, 68] = 5.0
        with torch.no_grad():
            p3_a = model.forward_features(flow, frame)["P3"]
            p3_b = model.forward_features(flow, shifted)["P3"]
        # compare interior region displaced by one cell along x
        a = p3_a[..., 4:12, 4:11]
        b = p3_b[..., 4:12, 5:12]
        torch.testing.assert_close(a, b, atol=1e-4, rtol=1e-4)
