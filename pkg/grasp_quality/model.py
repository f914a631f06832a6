"""
The two-tower grasp quality network: image tower, tiled grasp-depth merge,
post-merge convolutions and a dense classifier head
"""

import json
import logging
import struct
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from utils.data_models import LayerKind, LayerSpec, Mode, ModelConfig, NormStats
from utils.helpers import format_key_values, parse_key_values
from .autodiff import Tensor, concat
from .codec import ByteReader, decode_tensor, encode_tensor
from .errors import (
    CheckpointIOError,
    ConfigError,
    DimensionError,
    FormatError,
    TruncatedFileError,
)
from .layers import (
    BatchNormState,
    batchnorm,
    clip_probability,
    conv2d,
    dense,
    maxpool2d,
    relu,
    softmax,
    tile_depth,
)

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"GFM1"
CHECKPOINT_VERSION = 1

ArrayLike = Union[Tensor, np.ndarray]


class Model:
    """Parameters and batch-norm states of one network instance"""

    def __init__(
        self,
        config: ModelConfig,
        parameters: Dict[str, Tensor],
        batchnorms: Dict[str, BatchNormState],
        dtype=np.float32,
        norm_stats: Optional[NormStats] = None,
        normalized: Optional[bool] = None,
    ):
        self.config = config
        self.parameters = parameters
        self.batchnorms = batchnorms
        self.dtype = np.dtype(dtype)
        self.norm_stats = norm_stats
        # None until trained; False means inputs were fed as raw heights
        self.normalized = normalized

    def named_parameters(self) -> Dict[str, Tensor]:
        """Every trainable tensor, batch-norm affine terms included"""
        named: Dict[str, Tensor] = {}
        for name, tensor in self.parameters.items():
            named[name] = tensor
            layer = name.rsplit(".", 1)[0]
            if name.endswith(".kernels") and layer in self.batchnorms:
                named[f"{layer}.bn.scale"] = self.batchnorms[layer].scale
                named[f"{layer}.bn.shift"] = self.batchnorms[layer].shift
        return named

    def parameter_count(self) -> int:
        return sum(tensor.size for tensor in self.named_parameters().values())

    def zero_grad(self) -> None:
        for tensor in self.named_parameters().values():
            tensor.zero_grad()

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Everything a checkpoint stores, keyed by stable names"""
        arrays = {name: tensor.data for name, tensor in self.named_parameters().items()}
        for layer, state in self.batchnorms.items():
            arrays[f"{layer}.bn.running_mean"] = state.running_mean
            arrays[f"{layer}.bn.running_var"] = state.running_var
        return arrays


def _layer_plan(config: ModelConfig) -> List[Tuple[str, LayerSpec]]:
    """Stable layer names in execution order"""
    plan = []
    conv_index = pool_index = 0
    for spec in config.image_tower:
        if spec.kind == LayerKind.CONV:
            conv_index += 1
            plan.append((f"tower.conv{conv_index}", spec))
        else:
            pool_index += 1
            plan.append((f"tower.pool{pool_index}", spec))
    plan.append(("merge.conv", config.merge))
    for index, spec in enumerate(config.post_merge, start=1):
        plan.append((f"post.conv{index}", spec))
    return plan


def validate_config(config: Union[ModelConfig, Mapping]) -> ModelConfig:
    """Re-run every architecture rule, raising ConfigError on failure"""
    data = config.model_dump() if isinstance(config, ModelConfig) else dict(config)
    try:
        return ModelConfig.model_validate(data)
    except ValidationError as e:
        rules = "; ".join(error["msg"] for error in e.errors())
        raise ConfigError(f"invalid model config: {rules}") from e


def build(config: Union[ModelConfig, Mapping], dtype=np.float32) -> Model:
    """Instantiate a network with fan-in scaled normal weights"""
    config = validate_config(config)
    rng = np.random.default_rng(config.init_seed)
    parameters: Dict[str, Tensor] = {}
    batchnorms: Dict[str, BatchNormState] = {}

    def normal(shape, fan_in):
        values = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        return Tensor(values.astype(dtype), requires_grad=True)

    channels = 1
    for name, spec in _layer_plan(config):
        if spec.kind != LayerKind.CONV:
            continue
        if name == "merge.conv":
            channels += config.merge_channels
        fan_in = channels * spec.kernel * spec.kernel
        parameters[f"{name}.kernels"] = normal(
            (spec.filters, channels, spec.kernel, spec.kernel), fan_in
        )
        batchnorms[name] = BatchNormState.create(spec.filters, dtype=dtype)
        channels = spec.filters

    merged_channels, merged_size = config.merged_output()
    width = merged_channels * merged_size * merged_size
    for index, units in enumerate(config.head, start=1):
        parameters[f"head.dense{index}.weights"] = normal((width, units), width)
        parameters[f"head.dense{index}.bias"] = Tensor(
            np.zeros(units, dtype=dtype), requires_grad=True
        )
        width = units

    model = Model(config, parameters, batchnorms, dtype=dtype)
    logger.info(f"Built model with {model.parameter_count()} parameters")
    return model


def _as_tensor(value: ArrayLike, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value if value.dtype == dtype else Tensor(value.data.astype(dtype))
    return Tensor(np.asarray(value, dtype=dtype))


def forward_logits(
    model: Model, images: ArrayLike, z: ArrayLike, mode: Union[Mode, str]
) -> Tensor:
    """Two-class logits for a batch of crops and grasp depths"""
    config = model.config
    mode = Mode(mode)
    images = _as_tensor(images, model.dtype)
    z = _as_tensor(z, model.dtype)
    size = config.image_size
    if images.ndim != 4 or images.shape[1:] != (1, size, size):
        raise DimensionError(f"images must be N x 1 x {size} x {size}, got {images.shape}")
    if z.shape != (images.shape[0],):
        raise DimensionError(f"z must have shape ({images.shape[0]},), got {z.shape}")

    x = images
    for name, spec in _layer_plan(config):
        if spec.kind == LayerKind.MAXPOOL:
            x = maxpool2d(x, spec.kernel, spec.stride)
            continue
        if name == "merge.conv":
            x = _merge_depth(x, z, config)
        x = conv2d(x, model.parameters[f"{name}.kernels"], spec.stride, spec.padding)
        x = relu(batchnorm(x, model.batchnorms[name], mode))

    x = x.flatten()
    for index in range(1, len(config.head) + 1):
        x = dense(
            x,
            model.parameters[f"head.dense{index}.weights"],
            model.parameters[f"head.dense{index}.bias"],
        )
        if index < len(config.head):
            x = relu(x)
    return x


def _merge_depth(features: Tensor, z: Tensor, config: ModelConfig) -> Tensor:
    channels, size = config.tower_output()
    if features.shape[1:] != (channels, size, size):
        raise DimensionError(
            f"tower output {features.shape[1:]} does not match the tiled depth "
            f"plane ({config.merge_channels}, {size}, {size})"
        )
    depth = tile_depth(z, config.merge_channels, size, size)
    return concat([features, depth], axis=1)


def forward(model: Model, images: ArrayLike, z: ArrayLike, mode: Union[Mode, str]) -> Tensor:
    """Positive-class success probability per example, strictly inside (0, 1)"""
    return clip_probability(softmax(forward_logits(model, images, z, mode)).column(1))


def save(model: Model, path: Union[str, Path]) -> None:
    """Write the config, parameters and running statistics as a GFM1 file"""
    entries = {
        key: json.dumps(value, sort_keys=True)
        for key, value in model.config.model_dump(mode="json").items()
    }
    entries["dtype"] = json.dumps(model.dtype.name)
    if model.norm_stats is not None:
        entries["norm.mean"] = json.dumps(model.norm_stats.mean)
        entries["norm.std"] = json.dumps(model.norm_stats.std)
    if model.normalized is not None:
        entries["normalized"] = json.dumps(model.normalized)
    config_bytes = format_key_values(entries).encode("utf-8")

    arrays = model.state_arrays()
    chunks = [
        CHECKPOINT_MAGIC,
        struct.pack("<H", CHECKPOINT_VERSION),
        struct.pack("<I", len(config_bytes)),
        config_bytes,
        struct.pack("<I", len(arrays)),
    ]
    for name, array in arrays.items():
        encoded_name = name.encode("utf-8")
        payload = encode_tensor(array)
        chunks += [
            struct.pack("<H", len(encoded_name)),
            encoded_name,
            struct.pack("<Q", len(payload)),
            payload,
        ]
    try:
        Path(path).write_bytes(b"".join(chunks))
    except OSError as e:
        raise CheckpointIOError(f"cannot write checkpoint {path}: {e}") from e
    logger.info(f"Saved checkpoint with {len(arrays)} tensors to {path}")


def load(path: Union[str, Path]) -> Model:
    """Read a GFM1 checkpoint written by save()"""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointIOError(f"cannot read checkpoint {path}: {e}") from e

    reader = ByteReader(data)
    try:
        reader.expect_magic(CHECKPOINT_MAGIC)
        (version,) = reader.unpack("<H")
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}", reader.position - 2)
        (config_length,) = reader.unpack("<I")
        config_offset = reader.position
        try:
            entries = parse_key_values(reader.read(config_length).decode("utf-8"))
        except ValueError as e:
            raise FormatError(f"malformed config block in {path}: {e}", config_offset) from e
        arrays = _read_arrays(reader)
    except TruncatedFileError as e:
        raise CheckpointIOError(f"checkpoint {path} is truncated: {e}") from e
    except UnicodeDecodeError as e:
        raise FormatError(f"config block of {path} is not UTF-8: {e}") from e

    try:
        dtype = np.dtype(json.loads(entries.pop("dtype")))
        norm_mean = entries.pop("norm.mean", None)
        norm_std = entries.pop("norm.std", None)
        normalized = entries.pop("normalized", None)
        config = validate_config({key: json.loads(value) for key, value in entries.items()})
    except (KeyError, json.JSONDecodeError, TypeError) as e:
        raise FormatError(f"malformed config block in {path}: {e}") from e

    model = build(config, dtype=dtype)
    expected = model.state_arrays()
    if set(expected) != set(arrays):
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        raise FormatError(f"tensor names disagree with config (missing {missing}, extra {extra})")
    for name, array in arrays.items():
        if array.shape != expected[name].shape:
            raise DimensionError(
                f"{name} stored with shape {array.shape}, config expects {expected[name].shape}"
            )

    for name, tensor in model.named_parameters().items():
        tensor.data = arrays[name].astype(dtype)
    for layer, state in model.batchnorms.items():
        state.running_mean = arrays[f"{layer}.bn.running_mean"].astype(dtype)
        state.running_var = arrays[f"{layer}.bn.running_var"].astype(dtype)
    if norm_mean is not None and norm_std is not None:
        model.norm_stats = NormStats(mean=json.loads(norm_mean), std=json.loads(norm_std))
    if normalized is not None:
        model.normalized = bool(json.loads(normalized))
    logger.info(f"Loaded checkpoint {path}")
    return model


def _read_arrays(reader: ByteReader) -> Dict[str, np.ndarray]:
    (count,) = reader.unpack("<I")
    arrays: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_length,) = reader.unpack("<H")
        name = reader.read(name_length).decode("utf-8")
        (payload_length,) = reader.unpack("<Q")
        start = reader.position
        payload = ByteReader(reader.read(payload_length), base_offset=start)
        try:
            array = decode_tensor(payload)
        except TruncatedFileError as e:
            raise DimensionError(f"{name}: stored extents exceed its payload ({e})") from e
        if payload.remaining:
            raise DimensionError(
                f"{name}: stored extents leave {payload.remaining} payload bytes unused"
            )
        arrays[name] = array
    return arrays
