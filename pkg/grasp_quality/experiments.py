"""
Multi-run experiments: the augmentation ablation grid and the split-protocol comparison
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Mapping, Optional, Sequence, TypeVar

from utils.data_models import (
    AblationRow,
    AugmentConfig,
    ModelConfig,
    SplitComparisonRow,
    SplitKind,
    SplitSpec,
    TrainConfig,
)
from utils.helpers import thread_count
from .data import GraspDataset, split
from .evaluation import accuracy, predict
from .model import build
from .optim import input_stats, train

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

# Validation accuracies (%) of the four standard rows on the full-scale corpus;
# documentation targets only
REFERENCE_ACCURACIES = (96.78, 94.64, 96.03, 95.75)


def standard_ablation_rows() -> List[AugmentConfig]:
    """Normalize only, then symmetrize + mult pixels, + mult z, + GP noise"""
    return [
        AugmentConfig(normalize=True),
        AugmentConfig(normalize=True, symmetrize=True, mult_pixels=True),
        AugmentConfig(normalize=True, symmetrize=True, mult_pixels=True, mult_adjust_z=True),
        AugmentConfig(
            normalize=True, symmetrize=True, mult_pixels=True, mult_adjust_z=True, gp_noise=True
        ),
    ]


def standard_split_settings() -> Dict[str, AugmentConfig]:
    return {
        "no_augmentation": AugmentConfig(normalize=True),
        "all_augmentations": standard_ablation_rows()[-1],
    }


def _run_all(fn: Callable[[T], R], items: Sequence[T], workers: Optional[int]) -> List[R]:
    workers = workers or thread_count()
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(fn, items))
    return [fn(item) for item in items]


def _fit_and_score(
    dataset: GraspDataset,
    spec: SplitSpec,
    aug: AugmentConfig,
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
):
    """Train one fresh model; return (val accuracy, train accuracy) in eval mode"""
    train_ids, val_ids = split(dataset, spec)
    model = build(model_cfg)
    model, _ = train(model, dataset, (train_ids, val_ids), aug, train_cfg)
    stats = input_stats(dataset, train_ids, aug)

    def score(ids):
        probs = predict(model, dataset, ids, stats, batch_size=train_cfg.batch_size)
        return accuracy(probs, dataset.labels[dataset.positions(ids)])

    return score(val_ids), score(train_ids)


def ablation_grid(
    dataset: GraspDataset,
    rows: Sequence[AugmentConfig],
    train_cfg: TrainConfig,
    model_cfg: Optional[ModelConfig] = None,
    train_fraction: float = 0.8,
    workers: Optional[int] = None,
) -> List[AblationRow]:
    """One model per augmentation row on the image split, all with the same seeds"""
    model_cfg = model_cfg or ModelConfig.default(init_seed=train_cfg.seed)
    spec = SplitSpec(kind=SplitKind.IMAGE, train_fraction=train_fraction, seed=train_cfg.seed)

    def run(aug: AugmentConfig) -> AblationRow:
        val_acc, train_acc = _fit_and_score(dataset, spec, aug, train_cfg, model_cfg)
        logger.info(f"ablation {aug.flags()}: val {val_acc:.2f}%, train {train_acc:.2f}%")
        return AblationRow(
            **aug.flags(), val_accuracy=val_acc, train_accuracy=train_acc, seed=train_cfg.seed
        )

    return _run_all(run, list(rows), workers)


def split_comparison(
    dataset: GraspDataset,
    settings: Optional[Mapping[str, AugmentConfig]],
    train_cfg: TrainConfig,
    model_cfg: Optional[ModelConfig] = None,
    train_fraction: float = 0.8,
    workers: Optional[int] = None,
) -> List[SplitComparisonRow]:
    """Each augmentation setting trained and validated on the image, pose and object splits"""
    model_cfg = model_cfg or ModelConfig.default(init_seed=train_cfg.seed)
    settings = dict(settings or standard_split_settings())
    jobs = [(kind, name) for kind in SplitKind for name in settings]

    def run(job) -> SplitComparisonRow:
        kind, name = job
        spec = SplitSpec(kind=kind, train_fraction=train_fraction, seed=train_cfg.seed)
        val_acc, train_acc = _fit_and_score(dataset, spec, settings[name], train_cfg, model_cfg)
        logger.info(f"{kind.value} split, {name}: val {val_acc:.2f}%")
        return SplitComparisonRow(
            split=kind,
            setting=name,
            val_accuracy=val_acc,
            train_accuracy=train_acc,
            seed=train_cfg.seed,
        )

    return _run_all(run, jobs, workers)
