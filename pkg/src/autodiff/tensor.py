"""
Reverse-mode tape over dense float64 numpy arrays.

Operations executed while a Tape is active (see `recording`) append their
output node to the tape; `Tape.backward` replays the recorded nodes in
reverse order, each node accumulating its gradient into its parents. Outside
a tape nothing is recorded, which is how evaluation runs.
"""
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike

from src.errors import DegenerateInputError, NonFiniteError, ShapeError, StateError

_local = threading.local()


class Tape:
    """Ordered record of differentiable operations of one forward pass."""

    def __init__(self):
        self.nodes: list["Tensor"] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: "Tensor"):
        self.nodes.append(node)

    def backward(self, loss: "Tensor"):
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise StateError("loss does not depend on any parameter recorded on this tape")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward()


def _tape_stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def recording(tape: Tape | None = None):
    """Record operations on `tape` (a fresh one by default) inside the block."""
    tape = tape if tape is not None else Tape()
    stack = _tape_stack()
    stack.append(tape)
    try:
        yield tape
    finally:
        stack.pop()


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Dense float64 tensor participating in reverse-mode differentiation."""

    __array_ufunc__ = None  # ndarray <op> Tensor defers to Tensor's reflected ops

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._backward: Callable[[], None] | None = None
        self._parents: tuple = ()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def accumulate(self, grad: np.ndarray):
        if not self.requires_grad:
            return
        grad = _unbroadcast(grad, self.shape)
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    # arithmetic
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[np.ndarray], None], op: str) -> Tensor:
    """Wrap an op result; record it on the active tape when any parent needs gradients."""
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)

        def _backward():
            backward(out.grad)

        out._backward = _backward
        tape.record(out)
    return out


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a.accumulate(g)
        b.accumulate(g)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a.accumulate(g)
        b.accumulate(-g)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a.accumulate(g * b.data)
        b.accumulate(g * a.data)

    return _make(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a.accumulate(g / b.data)
        b.accumulate(-g * a.data / (b.data * b.data))

    return _make(a.data / b.data, (a, b), backward, "div")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        a.accumulate(g * exponent * a.data ** (exponent - 1.0))

    return _make(a.data ** exponent, (a,), backward, "power")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def backward(g):
        a.accumulate(g * 0.5 / out_data)

    return _make(out_data, (a,), backward, "sqrt")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        a.accumulate(g * out_data)

    return _make(out_data, (a,), backward, "exp")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def backward(g):
        a.accumulate(g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), backward, "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(-np.abs(a.data))
    out_data = np.where(a.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward(g):
        a.accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward, "sigmoid")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def backward(g):
        a.accumulate(g @ np.swapaxes(b.data, -1, -2))
        b.accumulate(np.swapaxes(a.data, -1, -2) @ g)

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def _parse_einsum(subscripts: str, n_operands: int) -> tuple[list[str], str]:
    if "->" not in subscripts or "." in subscripts:
        raise ShapeError(f"einsum needs explicit output subscripts without ellipsis: {subscripts!r}")
    inputs, output = subscripts.replace(" ", "").split("->")
    terms = inputs.split(",")
    if len(terms) != n_operands:
        raise ShapeError(f"einsum expects {len(terms)} operands, got {n_operands}")
    for term in terms:
        if len(set(term)) != len(term):
            raise ShapeError(f"repeated index inside one operand is not supported: {term!r}")
    return terms, output


def einsum(subscripts: str, *operands) -> Tensor:
    """Differentiable numpy.einsum with explicit output subscripts."""
    tensors = [as_tensor(x) for x in operands]
    terms, output = _parse_einsum(subscripts, len(tensors))
    try:
        out_data = np.einsum(subscripts, *[t.data for t in tensors], optimize=True)
    except ValueError as exc:
        raise ShapeError(f"einsum {subscripts!r} failed: {exc}") from exc

    def backward(g):
        for i, target in enumerate(tensors):
            if not target.requires_grad:
                continue
            others = [(terms[j], tensors[j].data) for j in range(len(tensors)) if j != i]
            available = set(output).union(*[set(t) for t, _ in others])
            kept = "".join(c for c in terms[i] if c in available)
            spec = ",".join([output] + [t for t, _ in others]) + "->" + kept
            partial = np.einsum(spec, g, *[d for _, d in others], optimize=True)
            if kept != terms[i]:
                expand = tuple(target.shape[k] if c in kept else 1 for k, c in enumerate(terms[i]))
                partial = np.broadcast_to(partial.reshape(expand), target.shape)
            target.accumulate(np.asarray(partial))

    return _make(np.asarray(out_data, dtype=np.float64), tensors, backward, "einsum")


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate(np.broadcast_to(g, a.shape))

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward, "sum")


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[k] for k in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) / float(count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out_data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from exc

    def backward(g):
        a.accumulate(g.reshape(a.shape))

    return _make(out_data, (a,), backward, "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        a.accumulate(np.transpose(g, inverse))

    return _make(np.transpose(a.data, axes), (a,), backward, "transpose")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        a.accumulate(full)

    return _make(np.array(a.data[index]), (a,), backward, "getitem")


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, part in zip(tensors, np.split(g, bounds, axis=axis)):
            t.accumulate(part)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        for k, t in enumerate(tensors):
            t.accumulate(np.take(g, k, axis=axis))

    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, backward, "stack")


def softmax(x, axis: int = -1) -> Tensor:
    """Max-shifted softmax; the shift is exact because softmax is shift invariant."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        x.accumulate(out_data * (g - np.sum(g * out_data, axis=axis, keepdims=True)))

    return _make(out_data, (x,), backward, "softmax")


def l2_normalize(x, axis: int = -1, eps: float = 1e-9) -> Tensor:
    """Radial projection onto the unit sphere along `axis`."""
    x = as_tensor(x)
    norm = sqrt(tsum(x * x, axis=axis, keepdims=True))
    smallest = float(norm.data.min()) if norm.size else 0.0
    if not smallest > eps:
        raise DegenerateInputError(f"cannot normalize a slice of norm {smallest:.3e}")
    return x / norm
