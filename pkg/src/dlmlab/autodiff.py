"""Define-by-run reverse-mode automatic differentiation over numpy arrays.

Every operation on a :class:`Tensor` records its parents and a closure that
maps the upstream gradient to the parents' gradients. Values are float64 and
checked for finiteness at creation, so a NaN or infinity is reported at the
node that produced it instead of silently spreading through a loss.

Two entry points are provided. The object style::

    x = Tensor([3.0], requires_grad=True)
    y = (x * x).sum()
    grads = grad(y, {"x": x})

and a functional style that binds named inputs::

    trace = forward(lambda x: (x * x).sum(), {"x": np.array([3.0])})
    backward(trace)   # {"x": array([6.])}
"""
from __future__ import annotations

import inspect
import itertools
import math
from typing import Callable, Mapping

import numpy as np

from dlmlab import kernels

_ids = itertools.count()


class AutodiffError(ValueError):
    """Base class for graph construction and differentiation errors."""


class ShapeError(AutodiffError):
    pass


class UnboundInputError(AutodiffError):
    pass


class DomainError(AutodiffError):
    """An input lies outside a primitive's domain (e.g. log of a non-positive)."""


class NonFiniteError(AutodiffError, ArithmeticError):
    def __init__(self, node_id: int, op: str):
        super().__init__(f"node {node_id} ({op}) produced a non-finite value")
        self.node_id = node_id
        self.op = op


class Tensor:
    __slots__ = ("data", "requires_grad", "op", "id", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, op="leaf"):
        arr = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data
        if arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        self.data = arr
        self.id = next(_ids)
        self.op = op
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        if not np.isfinite(arr).all():
            raise NonFiniteError(self.id, op)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, id={self.id})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


def _not_scalar(t):
    raise ShapeError(f"tensor of shape {t.shape} is not a scalar")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward, op) -> Tensor:
    live = tuple(p for p in parents if p.requires_grad)
    if not live:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward, op=op)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    out = a.data / b.data
    return _node(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError(f"log: non-positive input (min {a.data.min()!r})")
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


def softplus(a) -> Tensor:
    """``log(1 + exp(a))`` computed without overflow."""
    a = as_tensor(a)
    return _node(np.logaddexp(0.0, a.data), (a,), lambda g: (g * sigmoid_np(a.data),), "softplus")


def logaddexp(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "logaddexp")
    out = np.logaddexp(a.data, b.data)
    return _node(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g * np.exp(a.data - out), a.shape),
            _unbroadcast(g * np.exp(b.data - out), b.shape),
        ),
        "logaddexp",
    )


def clamp(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip to ``[lo, hi]``; the gradient is zero wherever clipping is active."""
    a = as_tensor(a)
    lo_ = -np.inf if lo is None else lo
    hi_ = np.inf if hi is None else hi
    if lo_ > hi_:
        raise DomainError(f"clamp: lo={lo} exceeds hi={hi}")
    inside = (a.data >= lo_) & (a.data <= hi_)
    return _node(np.clip(a.data, lo_, hi_), (a,), lambda g: (g * inside,), "clamp")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul: {exc}") from None

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, a.shape),
            None if gb is None else _unbroadcast(gb, b.shape),
        )

    return _node(out, (a, b), back, "matmul")


def conv2d(x, w) -> Tensor:
    """Valid stride-1 cross-correlation with one filter bank per sample.

    ``x`` is (S, B, C, H, W) and ``w`` is (S, F, C, k, k); the result is
    (S, B, F, H-k+1, W-k+1).
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 5 or w.ndim != 5:
        raise ShapeError(f"conv2d: expected 5-D operands, got {x.shape} and {w.shape}")
    if x.shape[0] != w.shape[0] or x.shape[2] != w.shape[2] or w.shape[3] != w.shape[4]:
        raise ShapeError(f"conv2d: incompatible shapes {x.shape} and {w.shape}")
    if w.shape[3] > min(x.shape[3], x.shape[4]):
        raise ShapeError(f"conv2d: kernel {w.shape[3]} larger than input {x.shape[3:]}")
    out = kernels.conv2d_forward(x.data, w.data)

    def back(g):
        g = np.ascontiguousarray(g)
        gx = kernels.conv2d_grad_input(g, w.data) if x.requires_grad else None
        gw = kernels.conv2d_grad_weight(x.data, g) if w.requires_grad else None
        return gx, gw

    return _node(out, (x, w), back, "conv2d")


# ---------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for {ndim}-D tensor")
        out.append(ax % ndim)
    return tuple(sorted(out))


def _expand(g, shape, axes):
    for ax in axes:
        g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        return (np.array(_expand(g, a.shape, () if keepdims else axes)),)

    return _node(out, (a,), back, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = math.prod(a.shape[ax] for ax in axes)
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def back(g):
        return (np.array(_expand(g, a.shape, () if keepdims else axes)) / count,)

    return _node(out, (a,), back, "mean")


def _lse(data: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(data, axis, -1)
    flat = moved.reshape(-1, moved.shape[-1])
    return kernels.logsumexp_rows(flat).reshape(moved.shape[:-1])


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Max-shifted ``log(sum(exp(a), axis))``."""
    a = as_tensor(a)
    (ax,) = _norm_axis(axis, a.ndim)
    if a.shape[ax] == 0:
        raise ShapeError("logsumexp over an empty axis")
    lse = _lse(a.data, ax)
    kept = np.expand_dims(lse, ax)

    def back(g):
        g = g if keepdims else np.expand_dims(g, ax)
        return (g * np.exp(a.data - kept),)

    return _node(kept if keepdims else lse, (a,), back, "logsumexp")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    (ax,) = _norm_axis(axis, a.ndim)
    out = a.data - np.expand_dims(_lse(a.data, ax), ax)

    def back(g):
        return (g - np.exp(out) * g.sum(axis=ax, keepdims=True),)

    return _node(out, (a,), back, "log_softmax")


# ---------------------------------------------------------------- shape ops


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} to {tuple(shape)}") from None
    return _node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return _node(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} to {tuple(shape)}") from None
    return _node(np.array(out), (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast_to")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data[index]
    except IndexError as exc:
        raise ShapeError(f"index error: {exc}") from None

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _node(np.array(out), (a,), back, "getitem")


# ---------------------------------------------------------------- differentiation


def _topo(output: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(output, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and p.id not in seen:
                stack.append((p, False))
    return order


def grad(output: Tensor, wrt: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``output`` w.r.t. each named tensor, summed over all paths."""
    if output.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
    grads: dict[int, np.ndarray] = {output.id: np.ones_like(output.data)}
    for node in reversed(_topo(output)):
        g = grads.pop(node.id, None) if node._backward is not None else grads.get(node.id)
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg
    return {
        name: np.asarray(grads.get(t.id, np.zeros_like(t.data))).reshape(t.shape)
        for name, t in wrt.items()
    }


class Trace:
    """Result of :func:`forward`: bound leaves plus the output node."""

    def __init__(self, inputs: dict[str, Tensor], output: Tensor):
        self.inputs = inputs
        self.output = output

    @property
    def value(self) -> np.ndarray:
        return self.output.data


def forward(fn: Callable[..., Tensor], bindings: Mapping[str, np.ndarray]) -> Trace:
    """Run ``fn`` on differentiable leaves built from ``bindings``."""
    params = inspect.signature(fn).parameters
    names = [n for n, p in params.items() if p.default is inspect.Parameter.empty
             and p.kind in (p.POSITIONAL_OR_KEYWORD, p.KEYWORD_ONLY)]
    missing = [n for n in names if n not in bindings]
    if missing:
        raise UnboundInputError(f"unbound inputs: {', '.join(missing)}")
    unknown = [n for n in bindings if n not in params]
    if unknown:
        raise UnboundInputError(f"bindings for unknown inputs: {', '.join(unknown)}")
    leaves = {n: Tensor(np.array(v, dtype=np.float64), requires_grad=True) for n, v in bindings.items()}
    out = as_tensor(fn(**leaves))
    return Trace(leaves, out)


def backward(trace: Trace) -> dict[str, np.ndarray]:
    if not isinstance(trace, Trace):
        raise AutodiffError("backward called before forward: expected a Trace")
    return grad(trace.output, trace.inputs)


def value_and_grad(fn: Callable[..., Tensor], bindings: Mapping[str, np.ndarray]):
    trace = forward(fn, bindings)
    return trace.output.item(), backward(trace)
