"""
Neural-network primitives built on the autodiff Tensor

All spatial operations use the N, C, H, W layout in row-major order.
"""

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from utils.data_models import Mode
from .autodiff import Tensor
from .errors import DimensionError

logger = logging.getLogger(__name__)

BATCHNORM_EPSILON = 1e-5
BATCHNORM_MOMENTUM = 0.9


def _require_rank(tensor: Tensor, rank: int, name: str) -> None:
    if tensor.ndim != rank:
        raise DimensionError(f"{name} must have rank {rank}, got shape {tensor.shape}")


def _windows(array: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Strided view of shape N, C, H', W', kh, kw"""
    view = sliding_window_view(array, (kh, kw), axis=(2, 3))
    return view[:, :, ::stride, ::stride]


def conv2d(input: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of input[N,C,H,W] with kernels[O,C,kH,kW]"""
    _require_rank(input, 4, "conv2d input")
    _require_rank(kernels, 4, "conv2d kernels")
    if stride < 1 or padding < 0:
        raise DimensionError(f"invalid stride {stride} / padding {padding}")
    n, c, h, w = input.shape
    o, kc, kh, kw = kernels.shape
    if kc != c:
        raise DimensionError(
            f"channel axis mismatch: input axis 1 has {c}, kernels axis 1 has {kc}"
        )
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(
            f"kernel spatial axes ({kh}, {kw}) exceed padded input axes "
            f"({h + 2 * padding}, {w + 2 * padding})"
        )

    padded = np.pad(input.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = _windows(padded, kh, kw, stride)
    ho, wo = windows.shape[2], windows.shape[3]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * ho * wo, c * kh * kw
    )
    kernel_matrix = kernels.data.reshape(o, c * kh * kw)
    out = (cols @ kernel_matrix.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def backward(grad):
        grad_rows = grad.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        grad_kernels = (grad_rows.T @ cols).reshape(kernels.shape)
        grad_cols = (grad_rows @ kernel_matrix).reshape(n, ho, wo, c, kh, kw)
        grad_padded = np.zeros_like(padded)
        for i in range(kh):
            for j in range(kw):
                row_slice = slice(i, i + stride * (ho - 1) + 1, stride)
                col_slice = slice(j, j + stride * (wo - 1) + 1, stride)
                patch = grad_cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                grad_padded[:, :, row_slice, col_slice] += patch
        grad_input = grad_padded[:, :, padding : padding + h, padding : padding + w]
        return np.ascontiguousarray(grad_input), grad_kernels

    return Tensor._from_op(out, (input, kernels), backward, "conv2d")


def maxpool2d(input: Tensor, window: int, stride: int) -> Tensor:
    """Max over window x window patches; ties resolve to the first row-major index"""
    _require_rank(input, 4, "maxpool2d input")
    if window < 1 or stride < 1:
        raise DimensionError(f"invalid window {window} / stride {stride}")
    n, c, h, w = input.shape
    if window > h or window > w:
        raise DimensionError(f"pool window {window} exceeds input axes ({h}, {w})")

    windows = _windows(input.data, window, window, stride)
    ho, wo = windows.shape[2], windows.shape[3]
    flat = windows.reshape(n, c, ho, wo, window * window)
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]

    def backward(grad):
        grad_input = np.zeros_like(input.data)
        for index in range(window * window):
            i, j = divmod(index, window)
            row_slice = slice(i, i + stride * (ho - 1) + 1, stride)
            col_slice = slice(j, j + stride * (wo - 1) + 1, stride)
            grad_input[:, :, row_slice, col_slice] += np.where(argmax == index, grad, 0)
        return (grad_input,)

    return Tensor._from_op(np.ascontiguousarray(out), (input,), backward, "maxpool2d")


@dataclass
class BatchNormState:
    """Per-channel affine parameters and running statistics"""

    scale: Tensor
    shift: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BATCHNORM_MOMENTUM
    epsilon: float = BATCHNORM_EPSILON

    @classmethod
    def create(cls, channels: int, dtype=np.float32) -> "BatchNormState":
        return cls(
            scale=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
            shift=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )

    @property
    def channels(self) -> int:
        return self.running_mean.shape[0]


def batchnorm(input: Tensor, state: BatchNormState, mode: Union[Mode, str]) -> Tensor:
    """Normalize each channel, then apply scale and shift"""
    _require_rank(input, 4, "batchnorm input")
    if input.shape[1] != state.channels:
        raise DimensionError(
            f"batchnorm channel axis has {input.shape[1]}, state has {state.channels}"
        )
    mode = Mode(mode)
    axes = (0, 2, 3)
    x = input.data
    shape = (1, -1, 1, 1)
    scale = state.scale.data.reshape(shape)

    if mode == Mode.TRAIN:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        state.running_mean = (
            state.momentum * state.running_mean + (1 - state.momentum) * mean
        ).astype(state.running_mean.dtype)
        state.running_var = (
            state.momentum * state.running_var + (1 - state.momentum) * var
        ).astype(state.running_var.dtype)
    else:
        mean = state.running_mean.astype(x.dtype)
        var = state.running_var.astype(x.dtype)

    inv_std = (1.0 / np.sqrt(var + state.epsilon)).astype(x.dtype)
    normalized = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    out = scale * normalized + state.shift.data.reshape(shape)
    count = x.shape[0] * x.shape[2] * x.shape[3]

    def backward(grad):
        grad_scale = (grad * normalized).sum(axis=axes)
        grad_shift = grad.sum(axis=axes)
        grad_normalized = grad * scale
        if mode == Mode.TRAIN:
            grad_input = (inv_std.reshape(shape) / count) * (
                count * grad_normalized
                - grad_normalized.sum(axis=axes, keepdims=True)
                - normalized * (grad_normalized * normalized).sum(axis=axes, keepdims=True)
            )
        else:
            grad_input = grad_normalized * inv_std.reshape(shape)
        return grad_input, grad_scale, grad_shift

    return Tensor._from_op(
        out.astype(x.dtype), (input, state.scale, state.shift), backward, f"batchnorm_{mode.value}"
    )


def dense(input: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map input[N,D] @ weights[D,K] + bias[K]"""
    _require_rank(input, 2, "dense input")
    _require_rank(weights, 2, "dense weights")
    _require_rank(bias, 1, "dense bias")
    if input.shape[1] != weights.shape[0]:
        raise DimensionError(
            f"inner axes mismatch: input axis 1 has {input.shape[1]}, "
            f"weights axis 0 has {weights.shape[0]}"
        )
    if bias.shape[0] != weights.shape[1]:
        raise DimensionError(
            f"bias axis 0 has {bias.shape[0]}, weights axis 1 has {weights.shape[1]}"
        )

    def backward(grad):
        return grad @ weights.data.T, input.data.T @ grad, grad.sum(axis=0)

    out = input.data @ weights.data + bias.data
    return Tensor._from_op(out, (input, weights, bias), backward, "dense")


def relu(input: Tensor) -> Tensor:
    mask = input.data > 0
    return Tensor._from_op(
        np.where(mask, input.data, 0).astype(input.dtype),
        (input,),
        lambda grad: (np.where(mask, grad, 0).astype(grad.dtype),),
        "relu",
    )


def sigmoid(input: Tensor) -> Tensor:
    x = input.data
    decay = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1 / (1 + decay), decay / (1 + decay)).astype(input.dtype)
    return Tensor._from_op(out, (input,), lambda grad: (grad * out * (1 - out),), "sigmoid")


def clip_probability(input: Tensor) -> Tensor:
    """Clamp into [eps, 1 - eps] of the tensor's dtype so no probability is exactly 0 or 1"""
    eps = np.finfo(input.dtype).eps
    inside = (input.data >= eps) & (input.data <= 1 - eps)
    return Tensor._from_op(
        np.clip(input.data, eps, 1 - eps).astype(input.dtype),
        (input,),
        lambda grad: (np.where(inside, grad, 0).astype(grad.dtype),),
        "clip",
    )


def softmax(logits: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor"""
    _require_rank(logits, 2, "softmax logits")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    out = exps / exps.sum(axis=1, keepdims=True)

    def backward(grad):
        return (out * (grad - (grad * out).sum(axis=1, keepdims=True)),)

    return Tensor._from_op(out, (logits,), backward, "softmax")


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-probability of the true class over a batch"""
    _require_rank(logits, 2, "loss logits")
    n, classes = logits.shape
    if classes != 2:
        raise DimensionError(f"loss expects 2 logits per row, got {classes}")
    labels = np.asarray(labels).astype(np.int64).reshape(-1)
    if labels.shape[0] != n:
        raise DimensionError(f"{labels.shape[0]} labels for {n} logit rows")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(n)
    loss = -log_probs[rows, labels].mean()
    probs = np.exp(log_probs)

    def backward(grad):
        delta = probs.copy()
        delta[rows, labels] -= 1
        return (delta * (grad / n),)

    return Tensor._from_op(
        np.asarray(loss, dtype=logits.dtype), (logits,), backward, "softmax_cross_entropy"
    )


def tile_depth(z: Tensor, channels: int, height: int, width: int) -> Tensor:
    """Broadcast z[N] into an N x channels x height x width block"""
    _require_rank(z, 1, "grasp depth")
    n = z.shape[0]
    out = np.broadcast_to(z.data.reshape(n, 1, 1, 1), (n, channels, height, width)).copy()
    return Tensor._from_op(
        out, (z,), lambda grad: (grad.sum(axis=(1, 2, 3)),), "tile_depth"
    )

