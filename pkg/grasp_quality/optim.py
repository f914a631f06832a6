"""
Adam with staircase learning-rate decay, and the mini-batch training loop
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from utils.data_models import AugmentConfig, HistoryRecord, Mode, NormStats, TrainConfig
from utils.helpers import derive_rng, log_training_event
from .augment import augment_arrays, compute_norm_stats
from .autodiff import Tensor
from .data import GraspDataset
from .errors import ConfigError, DimensionError, TrainingError
from .evaluation import accuracy, predict
from .layers import softmax, softmax_cross_entropy
from .model import Model, forward_logits

logger = logging.getLogger(__name__)

# Tags that keep the shuffle and augmentation streams of one seed apart
SHUFFLE_STREAM = 1
AUGMENT_STREAM = 2

Splits = Tuple[Sequence[int], Sequence[int]]
MetricsSink = Callable[[HistoryRecord], None]


def lr_at(step: int, cfg: TrainConfig) -> float:
    """base_lr * decay_factor ** floor(step / decay_every)"""
    return cfg.base_lr * cfg.decay_factor ** (step // cfg.decay_every)


@dataclass
class AdamState:
    """Step counter and per-parameter moment estimates"""

    step: int = 0
    first_moments: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moments: Dict[str, np.ndarray] = field(default_factory=dict)
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def create(
        cls, params: Mapping[str, Tensor], cfg: Optional[TrainConfig] = None
    ) -> "AdamState":
        cfg = cfg or TrainConfig()
        return cls(
            first_moments={name: np.zeros_like(p.data) for name, p in params.items()},
            second_moments={name: np.zeros_like(p.data) for name, p in params.items()},
            beta1=cfg.beta1,
            beta2=cfg.beta2,
            epsilon=cfg.adam_epsilon,
        )


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Optional[np.ndarray]],
    state: AdamState,
    lr: float,
    weight_decay: float,
) -> None:
    """One bias-corrected Adam update with L2 folded into the gradient"""
    step = state.step + 1
    checked: Dict[str, np.ndarray] = {}
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(param.data)
        if grad.shape != param.shape:
            raise DimensionError(
                f"gradient of {name} has shape {grad.shape}, parameter has {param.shape}"
            )
        if not np.all(np.isfinite(grad)):
            raise TrainingError("non-finite gradient", parameter=name, step=step)
        checked[name] = grad

    for name, param in params.items():
        grad = checked[name] + weight_decay * param.data
        m = state.first_moments.get(name)
        v = state.second_moments.get(name)
        if m is None:
            m, v = np.zeros_like(param.data), np.zeros_like(param.data)
        m = state.beta1 * m + (1 - state.beta1) * grad
        v = state.beta2 * v + (1 - state.beta2) * grad * grad
        state.first_moments[name] = m
        state.second_moments[name] = v
        m_hat = m / (1 - state.beta1**step)
        v_hat = v / (1 - state.beta2**step)
        update = lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        param.data = (param.data - update).astype(param.dtype)
    state.step = step


def input_stats(
    dataset: GraspDataset, train_ids: Sequence[int], aug: AugmentConfig
) -> Optional[NormStats]:
    """Normalization stats of the training split, or None when normalize is off"""
    if not aug.normalize:
        return None
    return compute_norm_stats(dataset.images[dataset.positions(train_ids)])


def _batch(
    dataset: GraspDataset,
    positions: np.ndarray,
    aug: AugmentConfig,
    stats: Optional[NormStats],
    seed: int,
    epoch: int,
    dtype,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    images, depths = [], []
    for position in positions:
        rng = derive_rng(seed, AUGMENT_STREAM, int(dataset.image_ids[position]), epoch)
        image, z, _ = augment_arrays(
            dataset.images[position], float(dataset.z[position]), aug, stats, rng
        )
        images.append(image)
        depths.append(z)
    images = np.stack(images)[:, None, :, :].astype(dtype)
    return images, np.asarray(depths, dtype=dtype), dataset.labels[positions]


def train(
    model: Model,
    dataset: GraspDataset,
    splits: Splits,
    aug: AugmentConfig,
    cfg: TrainConfig,
    sink: Optional[MetricsSink] = None,
) -> Tuple[Model, List[HistoryRecord]]:
    """Fit model on the train split, validating after every epoch"""
    train_ids, val_ids = (np.asarray(ids) for ids in splits)
    if len(train_ids) == 0 or len(val_ids) == 0:
        raise ConfigError(
            f"both splits must be nonempty (train {len(train_ids)}, val {len(val_ids)})"
        )
    history: List[HistoryRecord] = []
    if cfg.epochs == 0:
        return model, history

    train_positions = dataset.positions(train_ids)
    stats = input_stats(dataset, train_ids, aug)
    model.norm_stats = stats
    model.normalized = aug.normalize
    params = model.named_parameters()
    state = AdamState.create(params, cfg)
    logger.info(
        f"Training on {len(train_ids)} examples, validating on {len(val_ids)}, "
        f"{cfg.epochs} epochs of batch {cfg.batch_size}"
    )

    for epoch in range(1, cfg.epochs + 1):
        order = derive_rng(cfg.seed, SHUFFLE_STREAM, epoch).permutation(train_positions)
        losses: List[float] = []
        correct = 0
        lr = lr_at(state.step, cfg)
        for start in range(0, len(order), cfg.batch_size):
            positions = order[start : start + cfg.batch_size]
            images, depths, labels = _batch(
                dataset, positions, aug, stats, cfg.seed, epoch, model.dtype
            )
            logits = forward_logits(model, images, depths, Mode.TRAIN)
            loss = softmax_cross_entropy(logits, labels)
            if not np.isfinite(loss.item()):
                raise TrainingError("loss diverged", step=state.step + 1)

            model.zero_grad()
            loss.backward()
            lr = lr_at(state.step, cfg)
            adam_step(
                params, {name: p.grad for name, p in params.items()}, state, lr, cfg.weight_decay
            )
            losses.append(loss.item())
            probs = softmax(logits.detach()).column(1).data
            correct += int(np.sum((probs >= 0.5) == (labels == 1)))

        val_probs = predict(model, dataset, val_ids, stats, batch_size=cfg.batch_size)
        record = HistoryRecord(
            epoch=epoch,
            step=state.step,
            lr=lr,
            train_loss=float(np.mean(losses)),
            train_acc=100.0 * correct / len(order),
            val_acc=accuracy(val_probs, dataset.labels[dataset.positions(val_ids)]),
        )
        history.append(record)
        logger.info(
            f"epoch {epoch}: loss {record.train_loss:.4f}, "
            f"train {record.train_acc:.2f}%, val {record.val_acc:.2f}%"
        )
        log_training_event("epoch", **record.model_dump())
        if sink is not None:
            sink(record)
    return model, history
