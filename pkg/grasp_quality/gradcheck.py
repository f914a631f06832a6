"""
Finite-difference verification of analytic gradients
"""

import logging
from typing import Callable, Dict, Mapping, Optional

import numpy as np

from .autodiff import Tensor
from .errors import ContractError

logger = logging.getLogger(__name__)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(1, |a|, |n|) over all coordinates"""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / scale))


def _scalar(value: Tensor) -> float:
    if value.size != 1:
        raise ContractError(f"gradient check needs a scalar function, got shape {value.shape}")
    return float(value.data.reshape(-1)[0])


def grad_check(f: Callable[[Tensor], Tensor], point: Tensor, epsilon: float = 1e-5) -> float:
    """Compare backward() against central differences of f at point"""
    base = np.array(point.data, copy=True)
    x = Tensor(base.copy(), requires_grad=True, dtype=base.dtype)
    out = f(x)
    _scalar(out)
    if out.requires_grad:
        out.backward()
    analytic = x.grad if x.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    for index in range(base.size):
        shifted = base.copy()
        shifted.flat[index] = base.flat[index] + epsilon
        upper = _scalar(f(Tensor(shifted, dtype=base.dtype)))
        shifted.flat[index] = base.flat[index] - epsilon
        lower = _scalar(f(Tensor(shifted, dtype=base.dtype)))
        numeric.flat[index] = (upper - lower) / (2 * epsilon)

    return relative_error(analytic, numeric)


def grad_check_parameters(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    epsilon: float = 1e-6,
    max_coordinates: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> Dict[str, float]:
    """Per-parameter max relative error of a closure over named tensors

    When max_coordinates is set, that many coordinates per parameter are
    drawn from rng instead of checking every element.
    """
    for param in params.values():
        param.zero_grad()
    loss = loss_fn()
    _scalar(loss)
    loss.backward()

    errors: Dict[str, float] = {}
    for name, param in params.items():
        analytic = param.grad if param.grad is not None else np.zeros_like(param.data)
        original = param.data
        if max_coordinates is not None and max_coordinates < original.size:
            generator = rng if rng is not None else np.random.default_rng(0)
            indices = np.sort(generator.choice(original.size, max_coordinates, replace=False))
        else:
            indices = np.arange(original.size)

        numeric = np.zeros(len(indices), dtype=np.float64)
        try:
            for position, index in enumerate(indices):
                shifted = original.copy()
                shifted.flat[index] = original.flat[index] + epsilon
                param.data = shifted
                upper = _scalar(loss_fn())
                shifted.flat[index] = original.flat[index] - epsilon
                lower = _scalar(loss_fn())
                numeric[position] = (upper - lower) / (2 * epsilon)
        finally:
            param.data = original

        errors[name] = relative_error(analytic.reshape(-1)[indices], numeric)
        logger.debug(f"gradient check {name}: max relative error {errors[name]:.3e}")
    return errors
