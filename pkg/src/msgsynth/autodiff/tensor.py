"""Dense tensors with reverse-mode differentiation.

Every backward rule is expressed with the same differentiable primitives used
in the forward pass. Running :func:`grad` with ``create_graph=True`` therefore
records the backward pass itself, and a second :func:`grad` over the result
gives exact second-order derivatives (double backprop).
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def enable_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, True
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """N-dimensional float array, optionally linked into a gradient graph."""

    __slots__ = ("data", "requires_grad", "_fn", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self._fn: Function | None = None

    # -- metadata -----------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._fn is None

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype))

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other):
        return Add.apply(self, _lift(other, self))

    def __radd__(self, other):
        return Add.apply(_lift(other, self), self)

    def __sub__(self, other):
        return Add.apply(self, Neg.apply(_lift(other, self)))

    def __rsub__(self, other):
        return Add.apply(_lift(other, self), Neg.apply(self))

    def __mul__(self, other):
        return Mul.apply(self, _lift(other, self))

    def __rmul__(self, other):
        return Mul.apply(_lift(other, self), self)

    def __truediv__(self, other):
        return Div.apply(self, _lift(other, self))

    def __rtruediv__(self, other):
        return Div.apply(_lift(other, self), self)

    def __neg__(self):
        return Neg.apply(self)

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise TypeError("only constant exponents are supported")
        return Pow.apply(self, exponent=float(exponent))

    def __matmul__(self, other):
        return MatMul.apply(self, _lift(other, self))

    def __getitem__(self, index):
        return GetItem.apply(self, index=index)

    # -- reductions and shape ops -------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=_norm_axis(axis, self.ndim), keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        axes = _norm_axis(axis, self.ndim)
        count = int(np.prod([self.shape[a] for a in axes])) if axes else 1
        return self.sum(axes, keepdims) * (1.0 / count)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=tuple(shape))

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        return Transpose.apply(self, axes=tuple(axes))

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def broadcast_to(self, shape) -> "Tensor":
        return broadcast_to(self, shape)

    def exp(self) -> "Tensor":
        return Exp.apply(self)

    def log(self) -> "Tensor":
        return Log.apply(self)

    def sqrt(self) -> "Tensor":
        return Pow.apply(self, exponent=0.5)


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        if value.dtype != like.dtype:
            raise TypeError(f"dtype mismatch: {like.dtype} vs {value.dtype}")
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _norm_axis(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def check_same_dtype(*tensors: Tensor) -> None:
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise TypeError(f"dtype mismatch: {sorted(str(d) for d in dtypes)}")


class Parameter(Tensor):
    """Trainable leaf tensor. ``trainable=False`` freezes it."""

    __slots__ = ("grad",)

    def __init__(self, data, trainable: bool = True, dtype=None):
        super().__init__(data, requires_grad=trainable, dtype=dtype)
        self.grad = np.zeros_like(self.data)

    @property
    def trainable(self) -> bool:
        return self.requires_grad

    @trainable.setter
    def trainable(self, flag: bool) -> None:
        self.requires_grad = bool(flag)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter(shape={self.shape}, dtype={self.dtype}, trainable={self.trainable})"


class Function:
    """A recorded operation. Subclasses define ``forward`` on arrays and
    ``backward`` on Tensors (so the backward pass is itself differentiable)."""

    parents: tuple[Tensor, ...] = ()

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, g: Tensor, needs: Sequence[bool]) -> Sequence[Tensor | None]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        fn = cls()
        out = Tensor(fn.forward(*(t.data for t in inputs), **kwargs))
        if _grad_enabled and any(t.requires_grad for t in inputs):
            fn.parents = inputs
            out.requires_grad = True
            out._fn = fn
        return out


def _unbroadcast_shape(arr: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if arr.shape == shape:
        return arr
    lead = arr.ndim - len(shape)
    if lead:
        arr = arr.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and arr.shape[i] != 1)
    if axes:
        arr = arr.sum(axis=axes, keepdims=True)
    return arr


class SumTo(Function):
    def forward(self, a, shape):
        self.in_shape = a.shape
        return _unbroadcast_shape(a, shape)

    def backward(self, g, needs):
        return (broadcast_to(g, self.in_shape),)


class BroadcastTo(Function):
    def forward(self, a, shape):
        self.in_shape = a.shape
        return np.broadcast_to(a, shape)

    def backward(self, g, needs):
        return (sum_to(g, self.in_shape),)


def sum_to(t: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return t if t.shape == shape else SumTo.apply(t, shape=shape)


def broadcast_to(t: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return t if t.shape == shape else BroadcastTo.apply(t, shape=shape)


class Add(Function):
    def forward(self, a, b):
        if a.dtype != b.dtype:
            raise TypeError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
        return a + b

    def backward(self, g, needs):
        a, b = self.parents
        return (
            sum_to(g, a.shape) if needs[0] else None,
            sum_to(g, b.shape) if needs[1] else None,
        )


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, g, needs):
        return (-g,)


class Mul(Function):
    def forward(self, a, b):
        if a.dtype != b.dtype:
            raise TypeError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
        return a * b

    def backward(self, g, needs):
        a, b = self.parents
        return (
            sum_to(g * b, a.shape) if needs[0] else None,
            sum_to(g * a, b.shape) if needs[1] else None,
        )


class Div(Function):
    def forward(self, a, b):
        if a.dtype != b.dtype:
            raise TypeError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
        return a / b

    def backward(self, g, needs):
        a, b = self.parents
        return (
            sum_to(g / b, a.shape) if needs[0] else None,
            sum_to(-(g * a) / (b * b), b.shape) if needs[1] else None,
        )


class Pow(Function):
    def forward(self, a, exponent):
        self.exponent = exponent
        return np.power(a, a.dtype.type(exponent))

    def backward(self, g, needs):
        (a,) = self.parents
        p = self.exponent
        if p == 1.0:
            return (g,)
        return (g * (a ** (p - 1.0)) * p,)


class Exp(Function):
    def forward(self, a):
        return np.exp(a)

    def backward(self, g, needs):
        (a,) = self.parents
        return (g * Exp.apply(a),)


class Log(Function):
    def forward(self, a):
        return np.log(a)

    def backward(self, g, needs):
        (a,) = self.parents
        return (g / a,)


class Sum(Function):
    def forward(self, a, axis, keepdims):
        self.in_shape = a.shape
        self.axis = axis
        self.keepdims = keepdims
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def backward(self, g, needs):
        if not self.keepdims:
            kept = list(self.in_shape)
            for ax in self.axis:
                kept[ax] = 1
            g = g.reshape(tuple(kept))
        return (broadcast_to(g, self.in_shape),)


class Reshape(Function):
    def forward(self, a, shape):
        self.in_shape = a.shape
        return a.reshape(shape)

    def backward(self, g, needs):
        return (g.reshape(self.in_shape),)


class Transpose(Function):
    def forward(self, a, axes):
        self.axes = axes
        return np.transpose(a, axes)

    def backward(self, g, needs):
        return (g.transpose(tuple(np.argsort(self.axes))),)


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2:
            raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
        if a.dtype != b.dtype:
            raise TypeError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
        return a @ b

    def backward(self, g, needs):
        a, b = self.parents
        return (
            g @ b.transpose(1, 0) if needs[0] else None,
            a.transpose(1, 0) @ g if needs[1] else None,
        )


class GetItem(Function):
    def forward(self, a, index):
        self.in_shape = a.shape
        self.index = index
        return np.array(a[index])

    def backward(self, g, needs):
        return (ScatterItem.apply(g, index=self.index, shape=self.in_shape),)


class ScatterItem(Function):
    """Adjoint of GetItem: place ``g`` into zeros of the original shape."""

    def forward(self, g, index, shape):
        self.index = index
        out = np.zeros(shape, dtype=g.dtype)
        if _is_basic_index(index):
            out[index] = g
        else:
            np.add.at(out, index, g)
        return out

    def backward(self, g, needs):
        return (g[self.index],)


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(p is None or p is Ellipsis or isinstance(p, (int, slice)) for p in parts)


class Concat(Function):
    def forward(self, *arrays, axis):
        check = {a.dtype for a in arrays}
        if len(check) > 1:
            raise TypeError(f"dtype mismatch in concat: {sorted(map(str, check))}")
        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, g, needs):
        out = []
        start = 0
        for size, need in zip(self.sizes, needs):
            if need:
                index = [slice(None)] * g.ndim
                index[self.axis] = slice(start, start + size)
                out.append(g[tuple(index)])
            else:
                out.append(None)
            start += size
        return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node._fn is not None:
            for parent in node._fn.parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def grad(
    objective: Tensor,
    inputs: Iterable[Tensor],
    create_graph: bool = False,
    allow_unused: bool = False,
) -> list[Tensor]:
    """Return d(objective)/d(input) for each input.

    With ``create_graph`` the returned gradients stay linked into the graph, so
    they can be differentiated again. Inputs the objective does not depend on
    raise ``ValueError`` unless ``allow_unused``, in which case their gradient
    is zero.
    """
    inputs = list(inputs)
    if objective.size != 1:
        raise ValueError(f"objective must be a scalar, got shape {objective.shape}")
    for t in inputs:
        if not t.requires_grad:
            raise ValueError(f"input {t!r} does not require grad")
    if not objective.requires_grad:
        if allow_unused:
            return [Tensor(np.zeros(t.shape, dtype=t.dtype)) for t in inputs]
        raise ValueError("objective is not connected to any input")

    order = _topo_order(objective)
    wanted = {id(t) for t in inputs}
    # Forward pass over the topological order: a node is relevant if it is a
    # requested input or any of its parents is relevant.
    relevant: set[int] = set()
    for node in order:
        if id(node) in wanted:
            relevant.add(id(node))
        elif node._fn is not None and any(id(p) in relevant for p in node._fn.parents):
            relevant.add(id(node))
    missing = [t for t in inputs if id(t) not in relevant]
    if missing and not allow_unused:
        raise ValueError(f"{len(missing)} input(s) are not part of the objective's graph")

    grads: dict[int, Tensor] = {
        id(objective): Tensor(np.ones(objective.shape, dtype=objective.dtype))
    }
    ctx = enable_grad() if create_graph else no_grad()
    with ctx:
        for node in reversed(order):
            fn = node._fn
            if fn is None or id(node) not in relevant:
                continue
            g = grads.get(id(node)) if id(node) in wanted else grads.pop(id(node), None)
            if g is None:
                continue
            needs = [p.requires_grad and id(p) in relevant for p in fn.parents]
            if not any(needs):
                continue
            for parent, pg, need in zip(fn.parents, fn.backward(g, needs), needs):
                if not need or pg is None:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg
    out = []
    for t in inputs:
        g = grads.get(id(t))
        if g is None:
            g = Tensor(np.zeros(t.shape, dtype=t.dtype))
        elif not create_graph:
            g = Tensor(g.data)
        out.append(g)
    return out
