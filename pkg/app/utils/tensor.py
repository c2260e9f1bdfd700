"""
Dense float64 tensors with tape-based reverse-mode differentiation.

Operations only record themselves while a ``Tape`` is active in the current
context, so plain forward evaluation (inference, statistics, benchmarks) runs
on bare numpy arrays with no bookkeeping. A tape belongs to exactly one
training step; ``contextvars`` keeps concurrent callers isolated.
"""
import contextvars
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from app.utils.errors import ContractViolation

EPS = 1e-12

_active_tape: contextvars.ContextVar = contextvars.ContextVar("active_tape", default=None)


class Tensor:
    """
    N-dimensional float64 array with an optional gradient accumulator

    Attributes:
        data (np.ndarray): Values in row-major order
        grad (np.ndarray | None): Accumulated gradient, same shape as data
        requires_grad (bool): Whether gradients flow into this tensor
        name (str | None): Optional label, used for parameters
    """
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._vjp: Optional[Callable] = None
        self._tape: Optional["Tape"] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractViolation("division is only defined by a constant")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


def parameter(data, name: Optional[str] = None) -> Tensor:
    """Create a leaf tensor that receives gradients"""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


class Tape:
    """
    Ordered record of the operations of one forward pass.

    Nodes are appended in creation order, which is a topological order of the
    computation graph; walking it backwards reaches every node after all of
    its consumers.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: Tensor):
        node._tape = self
        self.nodes.append(node)

    def backward(self, loss: Tensor):
        """Accumulate dLoss/dLeaf into the ``grad`` of every leaf that requires it"""
        if loss.size != 1:
            raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise ContractViolation("loss was not recorded on this tape")

        pending = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            upstream = pending.pop(id(node), None)
            if upstream is None:
                continue
            for parent, grad in zip(node._parents, node._vjp(upstream)):
                if grad is None or not parent.requires_grad:
                    continue
                if parent._tape is self:
                    key = id(parent)
                    pending[key] = pending[key] + grad if key in pending else grad
                elif parent.grad is None:
                    parent.grad = np.array(grad, dtype=np.float64)
                else:
                    parent.grad = parent.grad + grad


def backward(loss: Tensor):
    """Back-propagate a scalar loss through the tape that recorded it"""
    if loss.size != 1:
        raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        raise ContractViolation("loss was not produced under an active Tape")
    loss._tape.backward(loss)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data: np.ndarray, parents: tuple, vjp: Callable) -> Tensor:
    out = Tensor(data)
    tape = _active_tape.get()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
        tape.record(out)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of an m×k and a k×n tensor"""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return _result(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ContractViolation(f"transpose needs a matrix, got shape {a.shape}")
    return _result(a.data.T.copy(), (a,), lambda g: (g.T,))


def relu(x: Tensor) -> Tensor:
    """Element-wise max(0, x); the subgradient at 0 is 0"""
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def tabs(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return _result(np.abs(x.data), (x,), lambda g: (g * sign,))


def tsum(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), vjp)


def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    """x / max(||x||_2, EPS) along ``axis``; the zero vector maps to zero"""
    norm = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True))
    denom = np.maximum(norm, EPS)
    y = x.data / denom

    def vjp(g):
        projected = (g - y * np.sum(g * y, axis=axis, keepdims=True)) / denom
        return (np.where(norm > EPS, projected, g / EPS),)

    return _result(y, (x,), vjp)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction"""
    if x.ndim != 2:
        raise ContractViolation(f"softmax_rows needs a matrix, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    return _result(s, (x,), lambda g: (s * (g - np.sum(g * s, axis=1, keepdims=True)),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ContractViolation("concat needs at least one tensor")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, bounds, axis=axis)),
    )


def take_rows(x: Tensor, indices: Iterable[int]) -> Tensor:
    """Gather rows of a matrix; repeated indices accumulate in the backward pass"""
    idx = np.asarray(list(indices), dtype=np.intp)

    def vjp(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _result(x.data[idx], (x,), vjp)


def numerical_gradient(fn: Callable[[], Tensor], tensor: Tensor, h: float = 1e-5,
                       indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    Central finite differences of a scalar function w.r.t. entries of ``tensor``

    Args:
        fn: Zero-argument callable evaluating the scalar (no tape required)
        tensor: Tensor whose data is perturbed in place and restored
        h: Step size
        indices: Flat indices to probe; all entries when omitted

    Returns:
        np.ndarray: Estimates for the probed entries, in ``indices`` order
    """
    flat = tensor.data.reshape(-1)
    probe = range(flat.size) if indices is None else indices
    estimates = []
    for i in probe:
        original = flat[i]
        flat[i] = original + h
        upper = _as_tensor(fn()).item()
        flat[i] = original - h
        lower = _as_tensor(fn()).item()
        flat[i] = original
        estimates.append((upper - lower) / (2.0 * h))
    return np.asarray(estimates)
