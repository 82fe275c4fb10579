import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Literal, Optional, Union, get_type_hints

from errors import ConfigError, UsageError

SCHEMA_VERSION = 1

type Precision = Literal["float64", "float32"]
type IouMode = Literal["bev", "3d"]
type Interpolation = Literal["all", "r11", "r40"]
type Backbone = Literal["mini", "stem"]


@dataclass(frozen=True)
class RCDConfig:
    pattern_rows: int = 8
    pattern_cols: int = 8
    # half-width of the initial grid, in units of the dilation angle
    pattern_span: float = 0.5
    sample_channels: int = 3
    pass_channels: Optional[int] = None
    lambda_init: float = 1.0
    gamma_init: float = 1.0
    range_floor: float = 0.5
    norm_eps: float = 1e-5
    fixed_dilation: Optional[float] = None

    @property
    def n_samples(self) -> int:
        return self.pattern_rows * self.pattern_cols


@dataclass(frozen=True)
class BinConfig:
    search_range: float = 3.0
    bin_size: float = 0.5
    heading_bins: int = 12
    anchor: tuple[float, float, float] = (4.7, 2.1, 1.7)

    @property
    def loc_bins(self) -> int:
        return int(round(2.0 * self.search_range / self.bin_size))

    @property
    def heading_bin_width(self) -> float:
        return 2.0 * math.pi / self.heading_bins


@dataclass(frozen=True)
class FocalConfig:
    alpha_fg: float = 0.25
    alpha_bg: float = 0.75
    focus: float = 2.0
    clamp: float = 1e-7


@dataclass(frozen=True)
class CalibrationConfig:
    azimuth_steps: int = 2048
    height_bins: int = 256
    incl_bins: int = 512
    height_range: tuple[float, float] = (-1.0, 1.0)
    incl_range: tuple[float, float] = (-0.5, 0.5)
    min_ground_distance: float = 0.5
    min_votes: int = 3
    refine_iterations: int = 3


@dataclass(frozen=True)
class SceneConfig:
    height: int = 64
    width: int = 256
    min_objects: int = 1
    max_objects: int = 5
    range_limits: tuple[float, float] = (5.0, 70.0)
    sensor_height: float = 1.73
    inclination_top: float = 0.05
    inclination_bottom: float = -0.35
    max_range: float = 80.0
    dims_jitter: float = 0.1
    object_intensity: float = 0.6
    ground_intensity: float = 0.2


@dataclass(frozen=True)
class RPNConfig:
    backbone: Backbone = "mini"
    stem_channels: int = 32
    stage_channels: int = 64
    embedding_channels: int = 16
    multi_scale_rcd: bool = True
    downsample: int = 2
    # per-channel multipliers applied to the 8 input planes before the stem
    input_scales: tuple[float, ...] = (0.02, 1.0, 1.0, 1.0, 1.0 / math.pi, 0.02, 0.02, 0.2)
    fg_prior: float = 0.1
    score_threshold: float = 0.3
    nms_iou: float = 0.7
    max_proposals: int = 400
    train_positives: int = 50
    train_negatives: int = 50
    proposal_iou: float = 0.5


@dataclass(frozen=True)
class RCNNConfig:
    grid: tuple[int, int, int] = (12, 8, 6)
    conv_channels: int = 16
    # pooling box = proposal grown by this much on every side, in meters
    pool_margin: float = 0.5
    chunk_size: int = 8


@dataclass(frozen=True)
class TrainerConfig:
    iterations: int = 2000
    batch_size: int = 2
    learning_rate: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 10.0
    dtype: Precision = "float64"
    log_every: int = 50
    prefetch: int = 4
    eval_scenes: int = 20
    checkpoint_every: int = 500


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.7
    mode: IouMode = "3d"
    # bucket lower edges; the last bucket is open-ended
    bucket_edges: tuple[float, ...] = (0.0, 30.0, 50.0)
    interpolation: Interpolation = "all"

    def bucket_of(self, distance: float) -> int:
        bucket = 0
        for i, edge in enumerate(self.bucket_edges):
            if distance >= edge:
                bucket = i
        return bucket

    def bucket_label(self, bucket: int) -> str:
        upper = self.bucket_edges[bucket + 1] if bucket + 1 < len(self.bucket_edges) else math.inf
        return f"[{self.bucket_edges[bucket]:g},{upper:g})"


@dataclass(frozen=True)
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    rcd: RCDConfig = field(default_factory=RCDConfig)
    bins: BinConfig = field(default_factory=BinConfig)
    focal: FocalConfig = field(default_factory=FocalConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    rpn: RPNConfig = field(default_factory=RPNConfig)
    rcnn: RCNNConfig = field(default_factory=RCNNConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> 'RunConfig':
        if "schema_version" not in data:
            raise ConfigError(f"config has no schema_version, expected {SCHEMA_VERSION}")
        version = data["schema_version"]
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}, expected {SCHEMA_VERSION}")
        config = _build(cls, data, "")
        _validate(config)
        return config

    @classmethod
    def load(cls, path: Union[str, os.PathLike]) -> 'RunConfig':
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def with_seed(self, seed: int) -> 'RunConfig':
        return dataclasses.replace(self, seed=seed)


def _build(cls: type, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"'{path or '<root>'}' must be a JSON object")
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(f'{path}{key}' for key in unknown)}")
    values = {}
    for name, value in data.items():
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            values[name] = _build(hint, value, f"{path}{name}.")
        elif isinstance(value, list):
            values[name] = tuple(value)
        else:
            values[name] = value
    return cls(**values)


def _validate(config: RunConfig):
    if config.rcd.range_floor <= 0 or config.rcd.lambda_init <= 0 or config.rcd.gamma_init <= 0:
        raise ConfigError("rcd.range_floor, rcd.lambda_init and rcd.gamma_init must be positive")
    if config.calibration.height_bins < 32 or config.calibration.incl_bins < 32:
        raise ConfigError("calibration bin counts must be at least 32")
    if config.scene.width % (config.rpn.downsample ** 2) != 0 and config.rpn.backbone == "mini":
        raise ConfigError("scene.width must be divisible by rpn.downsample squared")
    if list(config.eval.bucket_edges) != sorted(config.eval.bucket_edges) or config.eval.bucket_edges[0] != 0.0:
        raise ConfigError("eval.bucket_edges must be ascending and start at 0")
    if len(config.rpn.input_scales) != 8:
        raise ConfigError("rpn.input_scales must hold one multiplier per input channel (8)")
    if any(size <= 0 or size % 2 for size in config.rcnn.grid):
        raise ConfigError("rcnn.grid sizes must be positive and even")
    if config.rcnn.pool_margin < 0 or config.rcnn.chunk_size < 1:
        raise ConfigError("rcnn.pool_margin must be non-negative and rcnn.chunk_size positive")
    if config.trainer.batch_size < 1 or config.trainer.checkpoint_every < 1:
        raise ConfigError("trainer.batch_size and trainer.checkpoint_every must be positive")
