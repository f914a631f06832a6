"""
Reverse-mode automatic differentiation over dense numpy arrays
"""

import logging
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ContractError, DimensionError

logger = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float32

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
Operand = Union["Tensor", float, int, np.ndarray]


class Tensor:
    """N-dimensional array that records how it was computed"""

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        dtype=None,
        _parents: Tuple["Tensor", ...] = (),
        _backward: Optional[BackwardFn] = None,
        _op: str = "",
    ):
        if dtype is None:
            if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        array = np.asarray(data, dtype=dtype)
        if any(extent <= 0 for extent in array.shape):
            raise DimensionError(f"tensor extents must be positive, got {array.shape}")

        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    # Construction helpers

    @classmethod
    def _from_op(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward: BackwardFn,
        op: str,
    ) -> "Tensor":
        requires_grad = any(parent.requires_grad for parent in parents)
        return cls(
            data,
            requires_grad=requires_grad,
            dtype=data.dtype,
            _parents=tuple(parents) if requires_grad else (),
            _backward=backward if requires_grad else None,
            _op=op,
        )

    def _lift(self, other: Operand) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    # Properties

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self._op or 'leaf'})"

    # Graph traversal

    def _topological_order(self) -> List["Tensor"]:
        order: List[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self) -> None:
        """Populate grad on every requires_grad tensor this one depends on"""
        if self.data.size != 1:
            raise ContractError(f"backward needs a scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("backward called on a tensor outside any graph")

        pending = {id(self): np.ones_like(self.data)}
        for node in reversed(self._topological_order()):
            grad = pending.pop(id(node), None)
            if grad is None:
                continue
            node.grad = grad if node.grad is None else node.grad + grad
            if node._backward is None:
                continue
            for parent, parent_grad in zip(node._parents, node._backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + parent_grad
                else:
                    pending[key] = parent_grad

    # Arithmetic

    def __add__(self, other: Operand) -> "Tensor":
        other = self._lift(other)

        def backward(grad):
            return (
                _unbroadcast(grad, self.shape),
                _unbroadcast(grad, other.shape),
            )

        return Tensor._from_op(self.data + other.data, (self, other), backward, "add")

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._from_op(-self.data, (self,), lambda grad: (-grad,), "neg")

    def __sub__(self, other: Operand) -> "Tensor":
        return self + (-self._lift(other))

    def __rsub__(self, other: Operand) -> "Tensor":
        return self._lift(other) + (-self)

    def __mul__(self, other: Operand) -> "Tensor":
        other = self._lift(other)

        def backward(grad):
            return (
                _unbroadcast(grad * other.data, self.shape),
                _unbroadcast(grad * self.data, other.shape),
            )

        return Tensor._from_op(self.data * other.data, (self, other), backward, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other: Operand) -> "Tensor":
        other = self._lift(other)

        def backward(grad):
            return (
                _unbroadcast(grad / other.data, self.shape),
                _unbroadcast(-grad * self.data / (other.data * other.data), other.shape),
            )

        return Tensor._from_op(self.data / other.data, (self, other), backward, "div")

    def __rtruediv__(self, other: Operand) -> "Tensor":
        return self._lift(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        if isinstance(exponent, Tensor):
            raise ContractError("only constant exponents are supported")

        def backward(grad):
            return (grad * exponent * self.data ** (exponent - 1),)

        return Tensor._from_op(self.data**exponent, (self,), backward, "pow")

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor._from_op(out, (self,), lambda grad: (grad * out,), "exp")

    def log(self) -> "Tensor":
        return Tensor._from_op(
            np.log(self.data), (self,), lambda grad: (grad / self.data,), "log"
        )

    # Reductions and shape

    def sum(self, axis: Optional[int] = None) -> "Tensor":
        def backward(grad):
            if axis is not None:
                grad = np.expand_dims(grad, axis)
            return (np.broadcast_to(grad, self.shape).astype(self.dtype),)

        out = np.asarray(self.data.sum(axis=axis), dtype=self.dtype)
        return Tensor._from_op(out, (self,), backward, "sum")

    def mean(self, axis: Optional[int] = None) -> "Tensor":
        count = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis) * (1.0 / count)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        try:
            out = self.data.reshape(shape)
        except ValueError as e:
            raise DimensionError(f"cannot reshape {self.shape} into {shape}") from e
        return Tensor._from_op(
            out, (self,), lambda grad: (grad.reshape(self.shape),), "reshape"
        )

    def flatten(self) -> "Tensor":
        """Collapse every axis after the first"""
        return self.reshape(self.shape[0], -1)

    def column(self, index: int) -> "Tensor":
        """Select one column of a 2-D tensor"""
        if self.ndim != 2:
            raise DimensionError(f"column() needs a 2-D tensor, got {self.shape}")

        def backward(grad):
            full = np.zeros_like(self.data)
            full[:, index] = grad
            return (full,)

        return Tensor._from_op(
            np.ascontiguousarray(self.data[:, index]), (self,), backward, "column"
        )


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate tensors along an existing axis"""
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    reference = tensors[0].shape
    for tensor in tensors[1:]:
        if tensor.ndim != len(reference):
            raise DimensionError(f"concat rank mismatch: {reference} vs {tensor.shape}")
        for dim, (a, b) in enumerate(zip(reference, tensor.shape)):
            if dim != axis and a != b:
                raise DimensionError(
                    f"concat extent mismatch on axis {dim}: {reference} vs {tensor.shape}"
                )
    bounds = np.cumsum([0] + [tensor.shape[axis] for tensor in tensors])

    def backward(grad):
        return tuple(
            np.take(grad, np.arange(bounds[i], bounds[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    out = np.concatenate([tensor.data for tensor in tensors], axis=axis)
    return Tensor._from_op(out, tensors, backward, "concat")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand shape"""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)
