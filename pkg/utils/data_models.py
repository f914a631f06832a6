"""
Data models for the Grasp Quality Lab
"""

from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class Mode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


class LayerKind(str, Enum):
    CONV = "conv"
    MAXPOOL = "maxpool"


class SplitKind(str, Enum):
    IMAGE = "image"
    POSE = "pose"
    OBJECT = "object"


class FlipMode(str, Enum):
    INDEPENDENT = "independent"
    EXCLUSIVE = "exclusive"


class ShapeFamily(str, Enum):
    BOX = "box"
    CYLINDER = "cylinder"


class ReportKind(str, Enum):
    CALIBRATION = "calibration"
    HISTORY = "history"
    ABLATION = "ablation"
    SPLITS = "splits"


class LayerSpec(BaseModel):
    """One layer of a convolutional tower"""

    kind: LayerKind = Field(..., description="Layer kind (conv or maxpool)")
    filters: Optional[int] = Field(None, gt=0, description="Output channels (conv)")
    kernel: int = Field(3, gt=0, description="Kernel size (conv) or window (maxpool)")
    stride: int = Field(1, gt=0, description="Spatial stride")

    @model_validator(mode="after")
    def _check_kind(self) -> "LayerSpec":
        if self.kind == LayerKind.CONV:
            if self.filters is None:
                raise ValueError("conv layers need a filter count")
            if self.kernel % 2 == 0:
                raise ValueError("conv kernels must be odd for same padding")
        return self

    @classmethod
    def conv(cls, filters: int, kernel: int, stride: int = 1) -> "LayerSpec":
        return cls(kind=LayerKind.CONV, filters=filters, kernel=kernel, stride=stride)

    @classmethod
    def maxpool(cls, window: int = 2, stride: int = 2) -> "LayerSpec":
        return cls(kind=LayerKind.MAXPOOL, kernel=window, stride=stride)

    @property
    def padding(self) -> int:
        return self.kernel // 2 if self.kind == LayerKind.CONV else 0

    def output_size(self, size: int) -> int:
        return (size + 2 * self.padding - self.kernel) // self.stride + 1


class ModelConfig(BaseModel):
    """Declarative architecture of the two-tower grasp quality network"""

    image_size: int = Field(32, gt=0, description="Input crop height and width")
    image_tower: List[LayerSpec] = Field(..., description="Image tower layers")
    merge_channels: int = Field(16, gt=0, description="Channels of the tiled grasp depth")
    merge: LayerSpec = Field(..., description="Conv layer consuming the concatenation")
    post_merge: List[LayerSpec] = Field(..., description="Convs after the merge")
    head: List[int] = Field(
        default_factory=lambda: [1024, 2], description="Dense widths ending in 2 logits"
    )
    init_seed: int = Field(0, description="Seed of the weight initializer")

    @model_validator(mode="after")
    def _check_architecture(self) -> "ModelConfig":
        if not self.image_tower:
            raise ValueError("image tower must not be empty")
        if self.image_tower[-1].kind != LayerKind.MAXPOOL:
            raise ValueError("image tower must end with a max-pool")
        if self.merge.kind != LayerKind.CONV:
            raise ValueError("merge layer must be a conv")
        if len(self.post_merge) != 2:
            raise ValueError("exactly two convolutions must follow the merge")
        if any(spec.kind != LayerKind.CONV for spec in self.post_merge):
            raise ValueError("post-merge layers must be convs")
        if not self.head or self.head[-1] != 2:
            raise ValueError("head must end in 2 logits")
        if any(width <= 0 for width in self.head):
            raise ValueError("head widths must be positive")

        size = self.image_size
        for spec in self.image_tower:
            if spec.kernel > size + 2 * spec.padding:
                raise ValueError(
                    f"{spec.kind.value} kernel {spec.kernel} exceeds extent {size}"
                )
            size = spec.output_size(size)
        for spec in [self.merge, *self.post_merge]:
            if spec.kernel > size + 2 * spec.padding:
                raise ValueError(f"conv kernel {spec.kernel} exceeds extent {size}")
            size = spec.output_size(size)
        return self

    def tower_output(self) -> Tuple[int, int]:
        """Channels and spatial extent at the end of the image tower"""
        channels, size = 1, self.image_size
        for spec in self.image_tower:
            if spec.kind == LayerKind.CONV:
                channels = spec.filters
            size = spec.output_size(size)
        return channels, size

    def merged_output(self) -> Tuple[int, int]:
        """Channels and spatial extent after the last post-merge conv"""
        _, size = self.tower_output()
        channels = 0
        for spec in [self.merge, *self.post_merge]:
            channels = spec.filters
            size = spec.output_size(size)
        return channels, size

    @classmethod
    def default(cls, init_seed: int = 0) -> "ModelConfig":
        return cls(
            image_tower=[
                LayerSpec.conv(64, 7),
                LayerSpec.conv(64, 5),
                LayerSpec.maxpool(2, 2),
                LayerSpec.conv(128, 3),
                LayerSpec.conv(128, 3),
                LayerSpec.maxpool(2, 2),
            ],
            merge_channels=16,
            merge=LayerSpec.conv(128, 3),
            post_merge=[LayerSpec.conv(128, 3), LayerSpec.conv(128, 3)],
            head=[1024, 2],
            init_seed=init_seed,
        )

    @classmethod
    def compact(cls, init_seed: int = 0) -> "ModelConfig":
        """Same topology as the default with narrow layers, for CPU-budget runs"""
        return cls(
            image_tower=[
                LayerSpec.conv(8, 7),
                LayerSpec.conv(8, 5),
                LayerSpec.maxpool(2, 2),
                LayerSpec.conv(16, 3),
                LayerSpec.conv(16, 3),
                LayerSpec.maxpool(2, 2),
            ],
            merge_channels=4,
            merge=LayerSpec.conv(16, 3),
            post_merge=[LayerSpec.conv(16, 3), LayerSpec.conv(16, 3)],
            head=[64, 2],
            init_seed=init_seed,
        )

    @classmethod
    def tiny(cls, image_size: int = 8, init_seed: int = 0) -> "ModelConfig":
        """Two-filter network for finite-difference verification"""
        return cls(
            image_size=image_size,
            image_tower=[LayerSpec.conv(2, 3), LayerSpec.maxpool(2, 2)],
            merge_channels=1,
            merge=LayerSpec.conv(2, 3),
            post_merge=[LayerSpec.conv(2, 3), LayerSpec.conv(2, 3)],
            head=[3, 2],
            init_seed=init_seed,
        )

    @classmethod
    def preset(cls, name: str, init_seed: int = 0) -> "ModelConfig":
        presets = {"default": cls.default, "compact": cls.compact, "tiny": cls.tiny}
        if name not in presets:
            raise ValueError(f"unknown model preset {name!r}")
        return presets[name](init_seed=init_seed)


class TrainConfig(BaseModel):
    """Optimizer and schedule settings"""

    base_lr: float = Field(1e-4, gt=0, description="Initial learning rate")
    decay_factor: float = Field(0.95, gt=0, le=1, description="Staircase decay factor")
    decay_every: int = Field(50000, gt=0, description="Steps between decays")
    weight_decay: float = Field(1e-5, ge=0, description="L2 coefficient folded into grads")
    batch_size: int = Field(128, gt=0, description="Mini-batch size")
    epochs: int = Field(20, ge=0, description="Number of passes over the train split")
    seed: int = Field(0, ge=0, description="Seed of shuffling and augmentation")
    beta1: float = Field(0.9, gt=0, lt=1, description="Adam first-moment decay")
    beta2: float = Field(0.999, gt=0, lt=1, description="Adam second-moment decay")
    adam_epsilon: float = Field(1e-8, gt=0, description="Adam denominator epsilon")


class AugmentConfig(BaseModel):
    """On/off flags and parameters of each augmentation stage"""

    normalize: bool = Field(True, description="Standardize pixels with train stats")
    symmetrize: bool = Field(False, description="Random vertical/horizontal flips")
    mult_pixels: bool = Field(False, description="Gamma multiplicative pixel noise")
    mult_adjust_z: bool = Field(False, description="Scale grasp depth by the same factor")
    gp_noise: bool = Field(False, description="Additive bicubic-upsampled Gaussian grid")
    gamma_shape: float = Field(1000.0, gt=0, description="Gamma shape a")
    gamma_scale: float = Field(0.001, gt=0, description="Gamma scale b")
    gp_sigma: float = Field(0.005, ge=0, description="Std of the GP grid samples (meters)")
    gp_grid: int = Field(8, gt=0, description="GP grid size")
    gp_prob: float = Field(0.5, ge=0, le=1, description="Probability of GP noise")
    flip_prob: float = Field(0.5, ge=0, le=1, description="Probability of each flip")
    flip_mode: FlipMode = Field(FlipMode.INDEPENDENT, description="Flip coin reading")

    @model_validator(mode="after")
    def _check_z_adjustment(self) -> "AugmentConfig":
        if self.mult_adjust_z and not self.mult_pixels:
            raise ValueError("mult_adjust_z requires mult_pixels")
        return self

    def flags(self) -> dict:
        return {
            "normalize": self.normalize,
            "symmetrize": self.symmetrize,
            "mult_pixels": self.mult_pixels,
            "mult_adjust_z": self.mult_adjust_z,
            "gp_noise": self.gp_noise,
        }


class NormStats(BaseModel):
    """Dataset-global pixel statistics of the training split"""

    mean: float = Field(..., description="Pixel mean (meters)")
    std: float = Field(..., gt=0, description="Pixel standard deviation (meters)")


class SplitSpec(BaseModel):
    """Train/validation partition protocol"""

    kind: SplitKind = Field(SplitKind.IMAGE, description="Key the partition respects")
    train_fraction: float = Field(0.8, gt=0, lt=1, description="Share of keys in train")
    seed: int = Field(0, ge=0, description="Shuffle seed")


class SceneParams(BaseModel):
    """Parameters of the synthetic grasp-scene generator and its oracle"""

    shape_families: List[ShapeFamily] = Field(
        default_factory=lambda: [ShapeFamily.BOX, ShapeFamily.CYLINDER],
        description="Primitive shapes placed on the table",
    )
    height_range: Tuple[float, float] = Field(
        (0.02, 0.08), description="Object plateau height range (meters)"
    )
    footprint_range: Tuple[float, float] = Field(
        (2.0, 7.0), description="Object half-extent range (pixels)"
    )
    delta_min: float = Field(0.005, ge=0, description="Minimum closing stroke (meters)")
    delta_max: float = Field(0.035, gt=0, description="Maximum closing stroke (meters)")
    clearance: float = Field(0.01, gt=0, description="Finger clearance margin (meters)")
    finger_offset: int = Field(10, gt=0, description="Finger column offset (pixels)")
    image_size: int = Field(32, gt=0, description="Crop height and width")
    poses_per_object: int = Field(4, gt=0, description="Placements per object")
    grasps_per_pose: int = Field(8, gt=0, description="Grasp samples per placement")
    max_attempts: int = Field(200, gt=0, description="Rejection attempts per example")
    seed: int = Field(0, ge=0, description="Generator seed")

    @model_validator(mode="after")
    def _check_ranges(self) -> "SceneParams":
        if not self.delta_min < self.delta_max:
            raise ValueError("delta_min must be below delta_max")
        if not 0 < self.height_range[0] <= self.height_range[1]:
            raise ValueError("height range must be positive and ordered")
        if not 0 < self.footprint_range[0] <= self.footprint_range[1]:
            raise ValueError("footprint range must be positive and ordered")
        if self.finger_offset >= self.image_size // 2:
            raise ValueError("finger offset must stay inside the crop")
        if not self.shape_families:
            raise ValueError("at least one shape family is required")
        return self

    def scaled(self, gain: float) -> "SceneParams":
        """Copy with every metric length multiplied by gain"""
        return self.model_copy(
            update={
                "delta_min": self.delta_min * gain,
                "delta_max": self.delta_max * gain,
                "clearance": self.clearance * gain,
                "height_range": (self.height_range[0] * gain, self.height_range[1] * gain),
            }
        )


class GraspExample(BaseModel):
    """One depth crop with its grasp depth, label and identity keys"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    image: np.ndarray = Field(..., description="Heightmap crop (meters)")
    z: float = Field(..., ge=0, description="Grasp depth (meters)")
    phi: float = Field(0.0, description="Gripper orientation (radians)")
    label: int = Field(..., ge=0, le=1, description="Grasp success bit")
    object_id: int = Field(..., ge=0, description="Object key")
    pose_id: int = Field(..., ge=0, description="Placement key")
    image_id: int = Field(..., ge=0, description="Grasp sample key")


class HistoryRecord(BaseModel):
    """Per-epoch training summary"""

    epoch: int = Field(..., ge=1, description="Epoch number (1-based)")
    step: int = Field(..., ge=0, description="Optimizer steps taken so far")
    lr: float = Field(..., description="Learning rate at the last step")
    train_loss: float = Field(..., description="Mean mini-batch loss")
    train_acc: float = Field(..., ge=0, le=100, description="Training accuracy (%)")
    val_acc: float = Field(..., ge=0, le=100, description="Validation accuracy (%)")


class CalibrationBucket(BaseModel):
    """One probability bucket of a reliability diagram"""

    lower: float = Field(..., description="Inclusive lower bound")
    upper: float = Field(..., description="Upper bound (inclusive only for the last)")
    mean_pred: Optional[float] = Field(None, description="Mean predicted probability")
    freq: Optional[float] = Field(None, description="Empirical success frequency")
    count: int = Field(0, ge=0, description="Predictions falling in the bucket")


class CalibrationReport(BaseModel):
    """Bucketed calibration summary with ECE and MCE"""

    buckets: List[CalibrationBucket] = Field(..., description="Equal-width buckets")
    ece: float = Field(..., ge=0, description="Expected calibration error")
    mce: float = Field(..., ge=0, description="Maximum calibration error")
    n_buckets: int = Field(..., ge=2, description="Number of buckets")

    @property
    def total(self) -> int:
        return sum(bucket.count for bucket in self.buckets)


class AblationRow(BaseModel):
    """One augmentation combination and the accuracies it reached"""

    normalize: bool = Field(..., description="Normalize stage enabled")
    symmetrize: bool = Field(..., description="Symmetrize stage enabled")
    mult_pixels: bool = Field(..., description="Multiplicative pixel stage enabled")
    mult_adjust_z: bool = Field(..., description="Grasp depth adjustment enabled")
    gp_noise: bool = Field(..., description="GP noise stage enabled")
    val_accuracy: float = Field(..., ge=0, le=100, description="Validation accuracy (%)")
    train_accuracy: float = Field(..., ge=0, le=100, description="Training accuracy (%)")
    seed: int = Field(..., description="Run seed")


class SplitComparisonRow(BaseModel):
    """Accuracy of one augmentation setting on one split protocol"""

    split: SplitKind = Field(..., description="Split protocol")
    setting: str = Field(..., description="Augmentation setting name")
    val_accuracy: float = Field(..., ge=0, le=100, description="Validation accuracy (%)")
    train_accuracy: float = Field(..., ge=0, le=100, description="Training accuracy (%)")
    seed: int = Field(..., description="Run seed")


class RunConfig(BaseModel):
    """Everything one CLI invocation needs, merged from file and flags"""

    seed: int = Field(..., ge=0, description="Root seed of every random stream")
    model_preset: str = Field("default", description="ModelConfig preset name")
    train: TrainConfig = Field(default_factory=TrainConfig)
    augment: AugmentConfig = Field(default_factory=AugmentConfig)
    split: SplitSpec = Field(default_factory=SplitSpec)
    data_path: Optional[str] = Field(None, description="Dataset file")
    model_path: Optional[str] = Field(None, description="Checkpoint file")
    out_dir: Optional[str] = Field(None, description="Output directory")

    @model_validator(mode="after")
    def _check_preset(self) -> "RunConfig":
        ModelConfig.preset(self.model_preset)
        return self
