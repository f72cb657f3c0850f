"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation produces a new :class:`Tensor` that remembers
its parents and a closure mapping the output gradient to parent gradients.
The closures are written in terms of Tensor operations themselves, so a
backward pass run with ``create_graph=True`` is itself recorded and can be
differentiated again (needed for gradient penalties).
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NonFiniteError, ShapeError, UsageError

_seq = itertools.count()
_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable recording for the current thread."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@contextmanager
def enable_grad():
    prev = is_grad_enabled()
    _state.enabled = True
    try:
        yield
    finally:
        _state.enabled = prev


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


class Tensor:
    """A float64 array with an optional gradient slot.

    Non-leaf tensors carry ``_parents`` and ``_backward``; the creation
    sequence number orders them on the tape.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq", "_op")

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        arr = _as_array(data)
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor data contains NaN or Inf")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._seq = next(_seq)
        self._op = "leaf"

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self._op})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __float__(self) -> float:
        return self.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- operators -----------------------------------------------------

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
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def backward(self, gradient=None) -> None:
        backward(self, gradient)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced NaN or Inf")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._seq = next(_seq)
    out._op = op
    track = is_grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


# ----------------------------------------------------------------------
# broadcasting (scalars and size-1 axes of equal-rank operands only)
# ----------------------------------------------------------------------


def _broadcast_shape(a: tuple, b: tuple, op: str) -> tuple:
    if a == b:
        return a
    if len(a) == 0 or int(np.prod(a)) == 1 and len(a) <= len(b):
        return b
    if len(b) == 0 or int(np.prod(b)) == 1 and len(b) <= len(a):
        return a
    if len(a) != len(b):
        raise ShapeError(f"{op}: cannot broadcast {a} with {b}")
    out = []
    for x, y in zip(a, b):
        if x == y or y == 1:
            out.append(x)
        elif x == 1:
            out.append(y)
        else:
            raise ShapeError(f"{op}: cannot broadcast {a} with {b}")
    return tuple(out)


def unbroadcast(g: Tensor, shape: tuple) -> Tensor:
    """Sum ``g`` down to ``shape`` (inverse of the allowed broadcasts)."""
    if g.shape == shape:
        return g
    if len(shape) < g.ndim:
        return tsum(g).reshape(shape)
    axes = tuple(i for i, (s, t) in enumerate(zip(shape, g.shape)) if s == 1 and t != 1)
    return tsum(g, axis=axes, keepdims=True)


# ----------------------------------------------------------------------
# elementwise arithmetic
# ----------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape

    def bw(g, needs):
        return (unbroadcast(g, sa) if needs[0] else None, unbroadcast(g, sb) if needs[1] else None)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape

    def bw(g, needs):
        return (unbroadcast(g, sa) if needs[0] else None, unbroadcast(-g, sb) if needs[1] else None)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a.shape, b.shape, "mul")

    def bw(g, needs):
        return (
            unbroadcast(g * b, a.shape) if needs[0] else None,
            unbroadcast(g * a, b.shape) if needs[1] else None,
        )

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a.shape, b.shape, "div")

    def bw(g, needs):
        ga = unbroadcast(g / b, a.shape) if needs[0] else None
        gb = unbroadcast(-g * a / (b * b), b.shape) if needs[1] else None
        return ga, gb

    return _make(a.data / b.data, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = _wrap(a)
    return _make(-a.data, (a,), lambda g, needs: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    a = _wrap(a)
    p = float(exponent)

    def bw(g, needs):
        if p == 1.0:
            return (g,)
        return (g * (p * power(a, p - 1.0)),)

    return _make(np.power(a.data, p), (a,), bw, "pow")


def sqrt(a) -> Tensor:
    return power(a, 0.5)


def exp(a) -> Tensor:
    a = _wrap(a)

    def bw(g, needs):
        return (g * out,)

    out = _make(np.exp(a.data), (a,), bw, "exp")
    return out


def log(a) -> Tensor:
    a = _wrap(a)
    return _make(np.log(a.data), (a,), lambda g, needs: (g / a,), "log")


def masked(a: Tensor, mask: np.ndarray) -> Tensor:
    """Multiply by a constant array (no gradient to the mask)."""
    return mul(a, Tensor(mask))


# ----------------------------------------------------------------------
# activations
# ----------------------------------------------------------------------

LEAKY_SLOPE = 0.2


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = _wrap(a)

    def bw(g, needs):
        return (g * out * (1.0 - out),)

    out = _make(_stable_sigmoid(a.data), (a,), bw, "sigmoid")
    return out


def tanh(a) -> Tensor:
    a = _wrap(a)

    def bw(g, needs):
        return (g * (1.0 - out * out),)

    out = _make(np.tanh(a.data), (a,), bw, "tanh")
    return out


def leaky_relu(a, slope: float = LEAKY_SLOPE) -> Tensor:
    a = _wrap(a)
    mask = np.where(a.data > 0, 1.0, slope)

    def bw(g, needs):
        return (masked(g, mask),)

    return _make(a.data * mask, (a,), bw, "leaky_relu")


# ----------------------------------------------------------------------
# reductions and structural ops
# ----------------------------------------------------------------------


def _norm_axes(axis, ndim) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    axes = _norm_axes(axis, a.ndim)
    in_shape = a.shape
    kept = tuple(1 if i in axes else s for i, s in enumerate(in_shape))

    def bw(g, needs):
        return (expand(g.reshape(kept), in_shape),)

    data = a.data.sum(axis=axes, keepdims=keepdims)
    return _make(np.asarray(data), (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return tsum(a, axis=axes, keepdims=keepdims) * (1.0 / n)


def expand(a, shape: tuple) -> Tensor:
    """Broadcast ``a`` to ``shape`` along size-1 axes (same rank) or from a scalar."""
    a = _wrap(a)
    shape = tuple(shape)
    if _broadcast_shape(a.shape, shape, "expand") != shape:
        raise ShapeError(f"expand: cannot expand {a.shape} to {shape}")
    src = a.shape

    def bw(g, needs):
        return (unbroadcast(g, src),)

    data = np.broadcast_to(a.data.reshape(src if len(src) == len(shape) else ()), shape)
    return _make(np.ascontiguousarray(data), (a,), bw, "expand")


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    src = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {src} to {tuple(shape)}") from exc
    return _make(data, (a,), lambda g, needs: (g.reshape(src),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = _wrap(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g, needs: (transpose(g, inv),), "transpose")


def getitem(a, index) -> Tensor:
    a = _wrap(a)
    src = a.shape

    def bw(g, needs):
        return (_scatter(g, src, index),)

    return _make(np.asarray(a.data[index]), (a,), bw, "getitem")


def _scatter(g: Tensor, shape: tuple, index) -> Tensor:
    """Place ``g`` into zeros of ``shape`` at ``index`` (adjoint of getitem)."""

    def bw(gg, needs):
        return (getitem(gg, index),)

    data = np.zeros(shape)
    data[index] = g.data
    return _make(data, (g,), bw, "scatter")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: empty sequence")
    ndim = ts[0].ndim
    axis = axis % ndim
    for t in ts[1:]:
        if t.ndim != ndim or any(t.shape[i] != ts[0].shape[i] for i in range(ndim) if i != axis):
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]} on axis {axis}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def bw(g, needs):
        grads = []
        for k, need in enumerate(needs):
            if not need:
                grads.append(None)
                continue
            idx = [slice(None)] * ndim
            idx[axis] = slice(int(bounds[k]), int(bounds[k + 1]))
            grads.append(getitem(g, tuple(idx)))
        return tuple(grads)

    return _make(np.concatenate([t.data for t in ts], axis=axis), ts, bw, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    parts = []
    for t in ts:
        shape = list(t.shape)
        shape.insert(axis % (t.ndim + 1), 1)
        parts.append(t.reshape(tuple(shape)))
    return concat(parts, axis=axis)


# ----------------------------------------------------------------------
# matrix product
# ----------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """2-D matrix product ``a @ b``."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")

    def bw(g, needs):
        ga = matmul(g, transpose(b)) if needs[0] else None
        gb = matmul(transpose(a), g) if needs[1] else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), bw, "matmul")


# ----------------------------------------------------------------------
# backpropagation
# ----------------------------------------------------------------------


def _tape(root: Tensor) -> list[Tensor]:
    """All recorded nodes reachable from ``root``, newest first."""
    seen = {id(root)}
    stack_ = [root]
    nodes = []
    while stack_:
        node = stack_.pop()
        nodes.append(node)
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                stack_.append(p)
    nodes.sort(key=lambda t: t._seq, reverse=True)
    return nodes


def _run(root: Tensor, seed: Tensor, targets: set | None, create_graph: bool) -> dict:
    nodes = _tape(root)
    if targets is not None:
        relevant = set()
        for node in reversed(nodes):
            if id(node) in targets or any(id(p) in relevant for p in node._parents):
                relevant.add(id(node))
    else:
        relevant = {id(n) for n in nodes}
    grads: dict[int, Tensor] = {id(root): seed}
    ctx = enable_grad() if create_graph else no_grad()
    with ctx:
        for node in nodes:
            g = grads.get(id(node))
            if g is None or node._backward is None or id(node) not in relevant:
                continue
            needs = tuple(p.requires_grad and id(p) in relevant for p in node._parents)
            if not any(needs):
                continue
            parent_grads = node._backward(g, needs)
            for p, pg, need in zip(node._parents, parent_grads, needs):
                if not need or pg is None:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else add(prev, pg)
    return {"grads": grads, "nodes": nodes}


def backward(root: Tensor, gradient=None) -> None:
    """Accumulate d(root)/d(t) into ``t.grad`` for every reachable tensor.

    Repeated calls accumulate; call :func:`zero_grad` between passes.
    """
    if gradient is None:
        if root.size != 1:
            raise UsageError(f"backward needs a scalar root, got shape {root.shape}")
        seed = Tensor(np.ones(root.shape))
    else:
        seed = _wrap(gradient)
        if seed.shape != root.shape:
            raise ShapeError(f"backward: seed {seed.shape} does not match root {root.shape}")
    if not root.requires_grad:
        raise UsageError("backward: root does not depend on any tensor requiring grad")
    result = _run(root, seed, None, create_graph=False)
    grads = result["grads"]
    for node in result["nodes"]:
        g = grads.get(id(node))
        if g is None:
            continue
        node.grad = g.data.copy() if node.grad is None else node.grad + g.data


def grad(
    output: Tensor,
    inputs: Sequence[Tensor],
    grad_output=None,
    create_graph: bool = False,
) -> list[Tensor]:
    """Gradients of ``output`` with respect to ``inputs`` without touching ``.grad``.

    With ``create_graph`` the returned tensors are themselves on the tape.
    Inputs unreachable from ``output`` get zero gradients.
    """
    if grad_output is None:
        if output.size != 1:
            raise UsageError(f"grad needs a scalar output, got shape {output.shape}")
        seed = Tensor(np.ones(output.shape))
    else:
        seed = _wrap(grad_output)
    inputs = list(inputs)
    if not output.requires_grad:
        return [Tensor(np.zeros(t.shape)) for t in inputs]
    result = _run(output, seed, {id(t) for t in inputs}, create_graph=create_graph)
    grads = result["grads"]
    out = []
    for t in inputs:
        g = grads.get(id(t))
        out.append(Tensor(np.zeros(t.shape)) if g is None else g)
    return out


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
