"""
Grasp datasets: columnar storage, split protocols, the synthetic scene
generator with its analytic success oracle, and the GFD1 file format
"""

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Tuple, Union

import numpy as np

from utils.data_models import GraspExample, SceneParams, ShapeFamily, SplitKind, SplitSpec
from utils.helpers import derive_rng, thread_count
from .codec import ByteReader, decode_tensor, encode_tensor
from .errors import (
    CheckpointIOError,
    ContractError,
    DimensionError,
    FormatError,
    GenerationError,
    SplitError,
)

logger = logging.getLogger(__name__)

DATASET_MAGIC = b"GFD1"
RECORD_TAIL = struct.Struct("<ffB3Q")

# Generator streams: object shape, placement, grasp sample, label order
OBJECT_STREAM, POSE_STREAM, GRASP_STREAM, BALANCE_STREAM = 0, 1, 2, 3

# Labels are drawn away from every oracle threshold by this many meters
LABEL_MARGIN = 1e-4


@dataclass
class GraspDataset:
    """Examples stored column-wise; row order is the dataset order"""

    images: np.ndarray
    z: np.ndarray
    phi: np.ndarray
    labels: np.ndarray
    object_ids: np.ndarray
    pose_ids: np.ndarray
    image_ids: np.ndarray

    def __post_init__(self):
        self._positions = {int(image_id): row for row, image_id in enumerate(self.image_ids)}

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self) -> Iterator[GraspExample]:
        return (self.example(row) for row in range(len(self)))

    @property
    def image_size(self) -> int:
        return self.images.shape[1]

    @classmethod
    def empty(cls, image_size: int = 32) -> "GraspDataset":
        return cls.from_examples([], image_size=image_size)

    @classmethod
    def from_examples(cls, examples: List[GraspExample], image_size: int = 32) -> "GraspDataset":
        if examples:
            image_size = examples[0].image.shape[0]
        return cls(
            images=np.array(
                [example.image for example in examples], dtype=np.float32
            ).reshape(-1, image_size, image_size),
            z=np.array([example.z for example in examples], dtype=np.float32),
            phi=np.array([example.phi for example in examples], dtype=np.float32),
            labels=np.array([example.label for example in examples], dtype=np.uint8),
            object_ids=np.array([example.object_id for example in examples], dtype=np.uint64),
            pose_ids=np.array([example.pose_id for example in examples], dtype=np.uint64),
            image_ids=np.array([example.image_id for example in examples], dtype=np.uint64),
        )

    def example(self, row: int) -> GraspExample:
        return GraspExample(
            image=self.images[row],
            z=float(self.z[row]),
            phi=float(self.phi[row]),
            label=int(self.labels[row]),
            object_id=int(self.object_ids[row]),
            pose_id=int(self.pose_ids[row]),
            image_id=int(self.image_ids[row]),
        )

    def positions(self, image_ids) -> np.ndarray:
        """Row indices of the given image ids"""
        try:
            return np.array([self._positions[int(i)] for i in image_ids], dtype=np.int64)
        except KeyError as e:
            raise ContractError(f"image id {e.args[0]} is not in the dataset") from e

    def subset(self, image_ids) -> "GraspDataset":
        rows = self.positions(image_ids)
        return GraspDataset(
            images=self.images[rows],
            z=self.z[rows],
            phi=self.phi[rows],
            labels=self.labels[rows],
            object_ids=self.object_ids[rows],
            pose_ids=self.pose_ids[rows],
            image_ids=self.image_ids[rows],
        )

    def keys(self, kind: Union[SplitKind, str]) -> np.ndarray:
        """One key row per example for the given split kind"""
        kind = SplitKind(kind)
        if kind == SplitKind.OBJECT:
            columns = [self.object_ids]
        elif kind == SplitKind.POSE:
            columns = [self.object_ids, self.pose_ids]
        else:
            columns = [self.image_ids]
        return np.stack(columns, axis=1)

    def center_heights(self) -> np.ndarray:
        center = self.image_size // 2
        return self.images[:, center, center].astype(np.float64)


# Split protocols


def split(dataset: GraspDataset, spec: SplitSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Partition image ids so no key of spec.kind appears on both sides"""
    if len(dataset) == 0:
        raise SplitError("cannot split an empty dataset")
    unique_keys, inverse = np.unique(dataset.keys(spec.kind), axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    n_keys = len(unique_keys)
    if n_keys < 2:
        raise SplitError(f"{spec.kind.value} split needs at least 2 distinct keys, found {n_keys}")

    n_train = min(max(int(round(n_keys * spec.train_fraction)), 1), n_keys - 1)
    order = np.random.default_rng(spec.seed).permutation(n_keys)
    in_train = np.zeros(n_keys, dtype=bool)
    in_train[order[:n_train]] = True
    mask = in_train[inverse]
    logger.info(
        f"{spec.kind.value} split: {n_train}/{n_keys} keys, "
        f"{int(mask.sum())} train and {int((~mask).sum())} val examples"
    )
    return dataset.image_ids[mask], dataset.image_ids[~mask]


# Success oracle


def label_oracle(image: np.ndarray, z: float, params: SceneParams) -> int:
    """1 iff the jaws close within stroke on the center and both fingers clear"""
    image = np.asarray(image, dtype=np.float64)
    center = image.shape[0] // 2
    h_c = image[center, center]
    closing = h_c - float(z)
    within_stroke = params.delta_min <= closing <= params.delta_max
    fingers = (
        image[center, center - params.finger_offset],
        image[center, center + params.finger_offset],
    )
    clear = all(height <= h_c - params.clearance for height in fingers)
    return int(within_stroke and clear)


def oracle_margin(image: np.ndarray, z: float, params: SceneParams) -> float:
    """Distance in meters from the nearest oracle threshold"""
    image = np.asarray(image, dtype=np.float64)
    center = image.shape[0] // 2
    h_c = image[center, center]
    closing = h_c - float(z)
    fingers = (
        image[center, center - params.finger_offset],
        image[center, center + params.finger_offset],
    )
    gaps = [closing - params.delta_min, params.delta_max - closing]
    gaps += [h_c - params.clearance - height for height in fingers]
    return float(min(abs(gap) for gap in gaps))


# Synthetic scenes


def render(
    params: SceneParams,
    family: ShapeFamily,
    height: float,
    half_extents: Tuple[float, float],
    angle: float,
    offset: Tuple[float, float],
) -> np.ndarray:
    """Heightmap of one plateau primitive on a flat table, in crop coordinates"""
    size = params.image_size
    center = size // 2
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    dy = rows - (center + offset[0])
    dx = cols - (center + offset[1])
    cos, sin = np.cos(angle), np.sin(angle)
    u = cos * dx + sin * dy
    v = -sin * dx + cos * dy
    if family == ShapeFamily.BOX:
        inside = (np.abs(u) <= half_extents[0]) & (np.abs(v) <= half_extents[1])
    else:
        inside = u * u + v * v <= half_extents[0] * half_extents[0]
    return np.where(inside, height, 0.0)


def _generate_one(params: SceneParams, index: int) -> GraspExample:
    per_pose = params.grasps_per_pose
    per_object = params.poses_per_object * per_pose
    object_id, pose_id = index // per_object, index // per_pose

    shape_rng = derive_rng(params.seed, OBJECT_STREAM, object_id)
    family = ShapeFamily(params.shape_families[shape_rng.integers(len(params.shape_families))])
    height = shape_rng.uniform(*params.height_range)
    half_extents = (
        shape_rng.uniform(*params.footprint_range),
        shape_rng.uniform(*params.footprint_range),
    )
    angle = derive_rng(params.seed, POSE_STREAM, pose_id).uniform(0.0, np.pi)

    # Each consecutive pair of examples holds one positive and one negative
    order = derive_rng(params.seed, BALANCE_STREAM, index // 2).permutation(2)
    target = int(order[index % 2])

    grasp_rng = derive_rng(params.seed, GRASP_STREAM, index)
    reach = params.footprint_range[0]
    for _ in range(params.max_attempts):
        offset = tuple(grasp_rng.uniform(-reach, reach, size=2))
        image = render(params, family, height, half_extents, angle, offset).astype(np.float32)
        h_c = float(image[params.image_size // 2, params.image_size // 2])
        closing = grasp_rng.uniform(-0.5 * params.delta_max, 1.5 * params.delta_max)
        z = np.float32(max(0.0, h_c - closing))
        if label_oracle(image, z, params) != target:
            continue
        if oracle_margin(image, z, params) < LABEL_MARGIN:
            continue
        return GraspExample(
            image=image,
            z=float(z),
            phi=0.0,
            label=target,
            object_id=object_id,
            pose_id=pose_id,
            image_id=index,
        )
    raise GenerationError(
        f"no {'positive' if target else 'negative'} grasp for example {index} "
        f"after {params.max_attempts} attempts"
    )


def generate_synthetic(params: SceneParams, n: int) -> GraspDataset:
    """Render n labeled grasp crops; every example depends only on (seed, index)"""
    if n < 1:
        raise ContractError(f"generate_synthetic needs n >= 1, got {n}")
    workers = thread_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            examples = list(executor.map(lambda i: _generate_one(params, i), range(n)))
    else:
        examples = [_generate_one(params, index) for index in range(n)]
    dataset = GraspDataset.from_examples(examples, image_size=params.image_size)
    logger.info(
        f"Generated {n} examples over {len(np.unique(dataset.object_ids))} objects, "
        f"positive rate {dataset.labels.mean():.3f}"
    )
    return dataset


def stump_accuracy(dataset: GraspDataset) -> float:
    """Best accuracy (%) of a threshold-pair rule on h_c - z

    The rule predicts one class inside [t1, t2] and the other outside it.
    """
    if len(dataset) == 0:
        raise ContractError("stump accuracy of an empty dataset")
    closing = dataset.center_heights() - dataset.z.astype(np.float64)
    values, inverse = np.unique(closing, return_inverse=True)
    signed = np.where(dataset.labels == 1, 1.0, -1.0)
    weights = np.bincount(inverse.reshape(-1), weights=signed, minlength=len(values))

    def best_interval(w: np.ndarray) -> float:
        prefix = np.concatenate([[0.0], np.cumsum(w)])
        running_min = np.minimum.accumulate(prefix)
        return max(0.0, float(np.max(prefix[1:] - running_min[:-1])))

    positives = int(dataset.labels.sum())
    negatives = len(dataset) - positives
    correct = max(negatives + best_interval(weights), positives + best_interval(-weights))
    return 100.0 * correct / len(dataset)


# GFD1 files


def save_dataset(dataset: GraspDataset, path: Union[str, Path]) -> None:
    chunks = [DATASET_MAGIC, struct.pack("<I", len(dataset))]
    for row in range(len(dataset)):
        chunks.append(encode_tensor(dataset.images[row].astype(np.float32)))
        chunks.append(
            RECORD_TAIL.pack(
                float(dataset.z[row]),
                float(dataset.phi[row]),
                int(dataset.labels[row]),
                int(dataset.object_ids[row]),
                int(dataset.pose_ids[row]),
                int(dataset.image_ids[row]),
            )
        )
    try:
        Path(path).write_bytes(b"".join(chunks))
    except OSError as e:
        raise CheckpointIOError(f"cannot write dataset {path}: {e}") from e
    logger.info(f"Saved {len(dataset)} examples to {path}")


def load_dataset(path: Union[str, Path], image_size: Optional[int] = None) -> GraspDataset:
    """Read a GFD1 file, checking every example invariant"""
    try:
        reader = ByteReader(Path(path).read_bytes())
    except OSError as e:
        raise CheckpointIOError(f"cannot read dataset {path}: {e}") from e

    reader.expect_magic(DATASET_MAGIC)
    (count,) = reader.unpack("<I")
    examples: List[GraspExample] = []
    seen = set()
    for index in range(count):
        start = reader.position
        try:
            image = decode_tensor(reader)
        except DimensionError as e:
            raise FormatError(f"example {index} image: {e}", start) from e
        z, phi, label, object_id, pose_id, image_id = reader.unpack(RECORD_TAIL.format)
        if image.ndim != 2 or image.shape[0] != image.shape[1]:
            raise FormatError(f"example {index} image has shape {image.shape}", start)
        if examples and image.shape != examples[0].image.shape:
            raise FormatError(f"example {index} image size differs from the first", start)
        if not np.all(np.isfinite(image)) or np.any(image < 0):
            raise FormatError(f"example {index} image has negative or non-finite heights", start)
        if not (np.isfinite(z) and z >= 0):
            raise FormatError(f"example {index} has grasp depth {z}", start)
        if label not in (0, 1):
            raise FormatError(f"example {index} has label {label}", start)
        if image_id in seen:
            raise FormatError(f"duplicate image id {image_id}", start)
        seen.add(image_id)
        examples.append(
            GraspExample(
                image=image.astype(np.float32),
                z=z,
                phi=phi,
                label=label,
                object_id=object_id,
                pose_id=pose_id,
                image_id=image_id,
            )
        )
    if reader.remaining:
        raise FormatError(
            f"{reader.remaining} trailing bytes after {count} examples", reader.position
        )
    logger.info(f"Loaded {count} examples from {path}")
    return GraspDataset.from_examples(examples, image_size=image_size or 32)
