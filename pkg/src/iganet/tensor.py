"""Minimal dense tensor with a dynamic reverse-mode gradient tape.

Only the operations the pose-lifting model needs are provided. Every op takes
and returns :class:`Tensor`; when a :class:`GradTape` is active and at least one
input is tracked, the op appends a node with its backward rule to the tape.
Outside a tape the ops are plain numpy evaluations.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

DTYPE = np.float64
LN_EPS = 1e-5

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class ContractError(ValueError):
    """An op was called outside its documented contract."""


class Tensor:
    """A float64 array plus optional tape bookkeeping.

    ``requires_grad`` marks a leaf (a parameter) whose gradient is wanted.
    ``tape_id`` is set when the tensor is produced by a recorded op.
    Tensors that are neither are detached and never receive gradients.
    """

    __slots__ = ("data", "grad", "requires_grad", "tape_id", "_tape", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.tape_id: int | None = None
        self._tape: GradTape | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    # operator sugar; all routed through the recorded ops below
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# tape


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "GradTape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class GradTape:
    """Record-on-execute tape. Single owner; tapes are thread-local.

    Usage::

        with GradTape() as tape:
            loss = model(x)
        tape.backward(loss)          # accumulates into leaf.grad
        grads = tape.gradient(loss, params)  # or returns fresh arrays
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "GradTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def _tracks(self, t: Tensor) -> bool:
        return t.requires_grad or t._tape is self

    def _record(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
        out.tape_id = len(self.nodes)
        out._tape = self
        self.nodes.append(_Node(out, inputs, backward))

    def _propagate(self, loss: Tensor) -> dict[int, np.ndarray]:
        if loss.data.size != 1 or loss.ndim != 0:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise ContractError("loss was not produced on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=DTYPE)}
        for node in reversed(self.nodes[: loss.tape_id + 1]):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not self._tracks(t):
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return grads

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every tracked leaf reached."""
        grads = self._propagate(loss)
        for node in self.nodes:
            for t in node.inputs:
                if t.requires_grad and id(t) in grads:
                    g = grads.pop(id(t))
                    t.grad = g.copy() if t.grad is None else t.grad + g

    def gradient(self, loss: Tensor, sources: Iterable[Tensor]) -> list[np.ndarray]:
        """Return d(loss)/d(source) for each source; unreached sources get zeros."""
        grads = self._propagate(loss)
        return [grads.get(id(s), np.zeros_like(s.data)) for s in sources]


def _emit(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(tape._tracks(t) for t in inputs):
        tape._record(out, inputs, backward)
    return out


# ---------------------------------------------------------------------------
# broadcasting helpers


def _suffix_compatible(a: tuple, b: tuple) -> bool:
    """True when one shape equals the trailing part of the other."""
    short, long = (a, b) if len(a) <= len(b) else (b, a)
    return long[len(long) - len(short):] == short


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_elementwise(op: str, a: Tensor, b: Tensor) -> None:
    if not _suffix_compatible(a.shape, b.shape):
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not bias/batch compatible")


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("add", a, b)
    sa, sb = a.shape, b.shape
    return _emit(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("sub", a, b)
    sa, sb = a.shape, b.shape
    return _emit(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product. A 0-d operand acts as a (possibly learnable) scale."""
    _check_elementwise("mul", a, b)
    ad, bd = a.data, b.data
    return _emit(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def scale(x: Tensor, c: float) -> Tensor:
    return _emit(x.data * c, (x,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _emit(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def gelu(x: Tensor) -> Tensor:
    """x * Phi(x) with the exact Gaussian CDF."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))

    def back(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return _emit(xd * cdf, (x,), back)


# ---------------------------------------------------------------------------
# linear algebra and shape


def _wants(t: Tensor) -> bool:
    return t.requires_grad or t._tape is not None


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    try:
        out = np.matmul(ad, bd)
    except ValueError:
        raise ShapeError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}") from None

    def back(g):
        ga = gb = None
        if _wants(a):
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        if _wants(b):
            if bd.ndim == 2:
                # shared weight: fold the batch axes into one product
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return _emit(out, (a, b), back)


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    return _emit(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {old} to {tuple(shape)}") from None
    return _emit(out, (x,), lambda g: (g.reshape(old),))


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(..., J, C) -> (..., heads, J, C // heads)."""
    *lead, j, c = x.shape
    if heads < 1 or c % heads:
        raise ShapeError(f"channel dim {c} of {x.shape} not divisible into {heads} heads")
    d = c // heads
    out = np.moveaxis(x.data.reshape(*lead, j, heads, d), -2, -3)
    return _emit(out, (x,), lambda g: (np.moveaxis(g, -3, -2).reshape(*lead, j, c),))


def merge_heads(x: Tensor) -> Tensor:
    """(..., heads, J, d) -> (..., J, heads * d); inverse of :func:`split_heads`."""
    *lead, h, j, d = x.shape
    out = np.moveaxis(x.data, -3, -2).reshape(*lead, j, h * d)
    return _emit(out, (x,), lambda g: (np.moveaxis(g.reshape(*lead, j, h, d), -2, -3),))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


# ---------------------------------------------------------------------------
# reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axis(axis, x.ndim)
    shape = x.shape
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit(out, (x,), back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return scale(sum(x, axes, keepdims), 1.0 / n)


def norm_lastdim(x: Tensor) -> Tensor:
    """Euclidean norm over the last axis; the subgradient at 0 is taken as 0."""
    xd = x.data
    n = np.sqrt((xd * xd).sum(axis=-1))

    def back(g):
        safe = np.where(n > 0, n, 1.0)
        unit = np.where((n > 0)[..., None], xd / safe[..., None], 0.0)
        return (g[..., None] * unit,)

    return _emit(n, (x,), back)


# ---------------------------------------------------------------------------
# normalizations


def softmax_lastdim(x: Tensor) -> Tensor:
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ShapeError(f"softmax needs a non-empty last axis, got {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit(y, (x,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"layer_norm: input {x.shape} needs gamma/beta of shape ({c},), "
            f"got {gamma.shape} and {beta.shape}"
        )
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data

    def back(g):
        dxhat = g * gd
        dx = inv / c * (
            c * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _emit(xhat * gd + beta.data, (x, gamma, beta), back)
