"""Run configuration: defaults, YAML I/O, override merging, provenance hash.

Precedence is CLI flags > config file > built-in defaults.  Every run
serializes its merged config into the run directory (and checkpoints) so the
run is reproducible from that record plus the seed.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from .errors import ConfigError
from .evaluate import DEFAULT_IOU_THRESHOLDS
from .flow import ALLOWED_LAG_SETS, FarnebackParams, FlowConfig
from .infer import InferenceConfig
from .model import AnchorConfig
from .model.detector import VARIANT_NAMES
from .train import TrainConfig


@dataclass(frozen=True)
class BackboneConfig:
    pretrained: bool = False  # family follows the variant


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "v1"
    input_size: int = 608
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    head_depth: int = 4
    head_width: int = 256
    anchors: AnchorConfig = field(default_factory=AnchorConfig)

    def __post_init__(self):
        if self.variant not in VARIANT_NAMES:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.input_size < 32:
            raise ConfigError("input_size must be at least 32")

    @property
    def pretrained(self) -> bool:
        return self.backbone.pretrained


@dataclass(frozen=True)
class EvalConfig:
    thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS

    def __post_init__(self):
        if not self.thresholds or any(not (0 < t < 1) for t in self.thresholds):
            raise ConfigError("thresholds must be in (0, 1)")
        object.__setattr__(self, "thresholds", tuple(self.thresholds))


@dataclass(frozen=True)
class RunConfig:
    flow: FlowConfig = field(default_factory=FlowConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    infer: InferenceConfig = field(default_factory=InferenceConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    allow_custom_lags: bool = False

    def validate(self) -> "RunConfig":
        if tuple(self.flow.lags) not in ALLOWED_LAG_SETS and not self.allow_custom_lags:
            raise ConfigError(
                f"lag set {tuple(self.flow.lags)} is not one of {ALLOWED_LAG_SETS}; "
                "pass allow_custom_lags to override"
            )
        return self

    @property
    def input_hw(self) -> tuple[int, int]:
        return (self.model.input_size, self.model.input_size)


def default_config() -> RunConfig:
    return RunConfig()


def config_to_dict(config: RunConfig) -> dict:
    return asdict(config)


def _build(cls, data: dict, **fixups):
    try:
        return cls(**{**data, **fixups})
    except TypeError as exc:
        raise ConfigError(f"bad {cls.__name__} section: {exc}") from None


def config_from_dict(data: dict) -> RunConfig:
    data = dict(data or {})
    unknown = set(data) - {"flow", "model", "train", "infer", "eval", "allow_custom_lags"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    flow_data = dict(data.get("flow", {}))
    if "farneback" in flow_data:
        flow_data["farneback"] = _build(FarnebackParams, flow_data["farneback"])
    if "lags" in flow_data:
        flow_data["lags"] = tuple(flow_data["lags"])
    model_data = dict(data.get("model", {}))
    if "anchors" in model_data:
        anchors = dict(model_data["anchors"])
        for key in ("scales", "ratios", "variances"):
            if key in anchors:
                anchors[key] = tuple(anchors[key])
        model_data["anchors"] = _build(AnchorConfig, anchors)
    if "backbone" in model_data:
        model_data["backbone"] = _build(BackboneConfig, dict(model_data["backbone"]))
    eval_data = dict(data.get("eval", {}))
    if "thresholds" in eval_data:
        eval_data["thresholds"] = tuple(eval_data["thresholds"])
    return RunConfig(
        flow=_build(FlowConfig, flow_data),
        model=_build(ModelConfig, model_data),
        train=_build(TrainConfig, dict(data.get("train", {}))),
        infer=_build(InferenceConfig, dict(data.get("infer", {}))),
        eval=_build(EvalConfig, eval_data),
        allow_custom_lags=bool(data.get("allow_custom_lags", False)),
    )


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, optionally updated from a YAML file, then from overrides."""
    data = config_to_dict(default_config())
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"config root must be a mapping: {path}")
        data = _deep_merge(data, loaded)
    if overrides:
        data = _deep_merge(data, overrides)
    return config_from_dict(data).validate()


def config_yaml(config: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(config), sort_keys=True)


def save_config(config: RunConfig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(config_yaml(config), encoding="utf-8")


def config_hash(config: RunConfig) -> str:
    """Short digest of the canonical YAML form, for run-directory names."""
    return hashlib.sha1(config_yaml(config).encode("utf-8")).hexdigest()[:10]


def update_config(config: RunConfig, **section_overrides) -> RunConfig:
    """Replace whole sections, revalidating the result."""
    return replace(config, **section_overrides).validate()
