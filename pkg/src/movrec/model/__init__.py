from .anchors import AnchorConfig, AnchorGrid, decode_boxes, encode_boxes, generate_anchors
from .detector import (
    ModelVariant,
    MotionSaliencyDetector,
    VARIANT_NAMES,
    build_model,
    count_parameters,
    fuse_msf,
    make_variant,
)
from .fpn import FeaturePyramid, PyramidNetwork

__all__ = [
    "AnchorConfig",
    "AnchorGrid",
    "FeaturePyramid",
    "ModelVariant",
    "MotionSaliencyDetector",
    "PyramidNetwork",
    "VARIANT_NAMES",
    "build_model",
    "count_parameters",
    "decode_boxes",
    "encode_boxes",
    "fuse_msf",
    "generate_anchors",
    "make_variant",
]
