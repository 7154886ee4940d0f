"""Moving-object recognition for video streams.

Motion saliency from cascaded dense optical flow is fused with appearance
features inside a single-stage pyramid detector that localizes and
classifies only the moving objects in each frame, online.
"""

from .data import (
    CAR,
    CLASSES,
    HEAVY_VEHICLE,
    ClassLabel,
    DatasetStats,
    FrameRecord,
    MovingObjectInstance,
    VideoSequence,
    compute_dataset_stats,
)
from .errors import (
    AnnotationError,
    CheckpointError,
    ConfigError,
    EvaluationError,
    MovrecError,
    NotEnoughHistory,
    PretrainedWeightsError,
)
from .flow import (
    FlowCascade,
    FlowConfig,
    FlowField,
    FrameRingBuffer,
    MotionSaliencyStack,
    assemble_asof,
    build_cascade,
    compute_dense_flow,
)
from .geometry import BoundingBox, iou
from .infer import Detection, InferenceConfig, infer_frame, nms_detections
from .model import build_model, count_parameters, make_variant
from .train import TrainConfig, train_loop, train_step

__version__ = "0.1.0"

__all__ = [
    "AnnotationError",
    "BoundingBox",
    "CAR",
    "CLASSES",
    "CheckpointError",
    "ClassLabel",
    "ConfigError",
    "DatasetStats",
    "Detection",
    "EvaluationError",
    "FlowCascade",
    "FlowConfig",
    "FlowField",
    "FrameRecord",
    "FrameRingBuffer",
    "HEAVY_VEHICLE",
    "InferenceConfig",
    "MotionSaliencyStack",
    "MovingObjectInstance",
    "MovrecError",
    "NotEnoughHistory",
    "PretrainedWeightsError",
    "TrainConfig",
    "VideoSequence",
    "assemble_asof",
    "build_cascade",
    "build_model",
    "compute_dataset_stats",
    "compute_dense_flow",
    "count_parameters",
    "infer_frame",
    "iou",
    "make_variant",
    "nms_detections",
    "train_loop",
    "train_step",
]
