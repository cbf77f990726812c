"""Float64 tensors with a reverse-mode gradient tape.

Tensors are immutable wrappers around contiguous float64 numpy arrays. Ops
executed while a :class:`GradTape` is active, and that touch a tensor with
``requires_grad`` (or the output of another recorded op), are appended to the
tape together with a closure computing input cotangents.
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class TapeUsageError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "_tracked", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=np.float64, order="C", copy=True)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._tracked = False

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # no copy; caller hands over ownership of a freshly computed array
        t = cls.__new__(cls)
        # np.ascontiguousarray would promote 0-d results to shape (1,)
        arr = np.asarray(arr, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = arr.copy(order="C")
        arr.flags.writeable = False
        t.data = arr
        t.requires_grad = False
        t._tracked = False
        return t

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

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{flag})"

    def __len__(self):
        return self.data.shape[0]

    # operator sugar
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

    def __matmul__(self, other):
        return matmul(self, other)

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


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


_local = threading.local()


def _active_tapes() -> list:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


class GradTape:
    """Records primitive ops for a reverse pass.

    Use as a context manager. The tape is persistent: :meth:`gradient` may be
    called any number of times and yields bit-identical results. A tape
    belongs to the thread that opened it.

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> with GradTape() as tape:
    ...     y = (x * x).sum()
    >>> tape.gradient(y, [x])[0].data
    array([2., 4.])
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._seen: set[int] = set()

    def __enter__(self):
        _active_tapes().append(self)
        return self

    def __exit__(self, *exc):
        stack = _active_tapes()
        if stack and stack[-1] is self:
            stack.pop()
        else:  # pragma: no cover - misuse guard
            stack.remove(self)
        return False

    def watch(self, t: Tensor) -> None:
        t._tracked = True

    def _record(self, inputs, output, backward):
        self.nodes.append(_Node(inputs, output, backward))
        for t in inputs:
            self._seen.add(id(t))

    def gradient(self, target: Tensor, sources: Sequence[Tensor]) -> list[Tensor]:
        if target.size != 1:
            raise ShapeError(f"gradient target must be a scalar, got shape {target.shape}")
        for i, s in enumerate(sources):
            if id(s) not in self._seen and s is not target:
                raise TapeUsageError(f"source #{i} with shape {s.shape} was not recorded on this tape")
        grads: dict[int, np.ndarray] = {id(target): np.ones_like(target.data)}
        for node in reversed(self.nodes):
            g = grads.get(id(node.output))
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not (t.requires_grad or t._tracked):
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        out = []
        for s in sources:
            g = grads.get(id(s))
            out.append(Tensor._wrap(np.zeros_like(s.data) if g is None else g))
        return out


def _emit(out: np.ndarray, inputs: tuple, backward: Callable) -> Tensor:
    res = Tensor._wrap(out)
    stack = getattr(_local, "tapes", None)
    if stack and any(t.requires_grad or t._tracked for t in inputs):
        res._tracked = True
        stack[-1]._record(inputs, res, backward)
    return res


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def back(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))
    return _emit(out, (a, b), back)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit(-a.data, (a,), lambda g: (-g,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _emit(out, (a,), lambda g: (g * 0.5 / out,))


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x) -> Tensor:
    """x * sigmoid(x), elementwise."""
    x = as_tensor(x)
    s = sigmoid_np(x.data)
    return _emit(x.data * s, (x,), lambda g: (g * (s * (1.0 + x.data * (1.0 - s))),))


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x) -> Tensor:
    """Exact GELU, x * Phi(x) with Phi the standard normal CDF."""
    from scipy.special import erf

    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
    return _emit(x.data * cdf, (x,), lambda g: (g * (cdf + x.data * pdf),))


def where(cond, a, b) -> Tensor:
    """Select from ``a`` where ``cond`` is true, else from ``b`` (broadcasting)."""
    cond = np.asarray(cond.data if isinstance(cond, Tensor) else cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    out = np.where(cond, a.data, b.data)

    def back(g):
        zero = np.zeros_like(g)
        return (_unbroadcast(np.where(cond, g, zero), a.shape),
                _unbroadcast(np.where(cond, zero, g), b.shape))
    return _emit(out, (a, b), back)


# -- reductions & shape -------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _emit(np.asarray(out), (a,), back)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return mul(tsum(a, axis=axes, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _emit(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _emit(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def take(a, indices, axis: int = 0) -> Tensor:
    """Gather slices of ``a`` along ``axis``; repeated indices accumulate in backward."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    axis = axis % a.ndim
    out = np.take(a.data, idx, axis=axis)

    def back(g):
        ga = np.zeros_like(a.data)
        gm = np.moveaxis(g, list(range(axis, axis + idx.ndim)), list(range(idx.ndim)))
        gm = gm.reshape((idx.size,) + gm.shape[idx.ndim:])
        target = np.moveaxis(ga, axis, 0)
        np.add.at(target, idx.reshape(-1), gm)
        return (ga,)
    return _emit(out, (a,), back)


# -- linear algebra -----------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes.

    Supported layouts: ``[..., m, k] @ [k, n]`` and ``[..., m, k] @ [..., k, n]``
    with identical leading axes.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or (
            b.ndim > 2 and a.shape[:-2] != b.shape[:-2]):
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = np.matmul(a.data, b.data)
    if b.ndim == 2:
        def back(g):
            ga = np.matmul(g, b.data.T)
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb
    else:
        def back(g):
            return (np.matmul(g, np.swapaxes(b.data, -1, -2)),
                    np.matmul(np.swapaxes(a.data, -1, -2), g))
    return _emit(out, (a, b), back)


def softmax_lastdim(x) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)
    return _emit(p, (x,), back)


def layer_norm(x, gamma, beta, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis with population variance, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if eps < 0:
        raise ValueError(f"layer_norm: eps must be non-negative, got {eps}")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: x has last dim {d} but gamma {gamma.shape}, beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def back(g):
        gxhat = g * gamma.data
        gx = rstd * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                     - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)
    return _emit(out, (x, gamma, beta), back)


def custom_op(inputs: Sequence[Tensor], out: np.ndarray, backward: Callable) -> Tensor:
    """Register an op defined elsewhere (e.g. rotary embedding) on the tape."""
    return _emit(out, tuple(inputs), backward)
