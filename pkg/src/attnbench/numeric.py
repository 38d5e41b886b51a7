"""Dense double-precision linear algebra with a small reverse-mode graph.

Every op accepts plain ``numpy`` arrays or :class:`Var` nodes.  With only
arrays in, the op returns an array and records nothing, which keeps the
inference path free of graph overhead.  As soon as one input is a ``Var`` the
result is a ``Var`` that remembers how to push gradients back to its parents.

Arrays are treated as matrices on their last two axes; any leading axes are
batch axes and broadcast the way ``np.matmul`` does.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DegenerateRowError, EvaluationError, ShapeError, UnknownParameterError


class Var:
    """A node in the gradient graph."""

    __slots__ = ("value", "parents", "grad_fn", "name")

    def __init__(self, value, parents=(), grad_fn=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.grad_fn = grad_fn
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


@dataclass
class Gradient:
    name: str | None
    value: np.ndarray


def value_of(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _node(value, parents, grad_fn):
    """Wrap ``value`` as a Var only if some parent is tracked."""
    tracked = [p for p in parents if isinstance(p, Var)]
    if not tracked:
        return value
    return Var(value, parents, grad_fn)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _swap(a):
    return np.swapaxes(a, -1, -2)


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.ndim < 2 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {av.shape} by {bv.shape}")
    out = np.matmul(av, bv)

    def grad_fn(g):
        return (_unbroadcast(np.matmul(g, _swap(bv)), av.shape),
                _unbroadcast(np.matmul(_swap(av), g), bv.shape))

    return _node(out, (a, b), grad_fn)


def transpose(a):
    av = value_of(a)
    return _node(_swap(av), (a,), lambda g: (_swap(g),))


def add(a, b):
    av, bv = value_of(a), value_of(b)
    try:
        out = av + bv
    except ValueError as exc:
        raise ShapeError(f"add: {av.shape} and {bv.shape} do not broadcast") from exc
    return _node(out, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    try:
        out = av * bv
    except ValueError as exc:
        raise ShapeError(f"mul: {av.shape} and {bv.shape} do not broadcast") from exc
    return _node(out, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def scale(a, c: float):
    av = value_of(a)
    return _node(av * c, (a,), lambda g: (g * c,))


def relu(a):
    av = value_of(a)
    keep = av > 0
    return _node(np.where(keep, av, 0.0), (a,), lambda g: (g * keep,))


def _softmax(av, mask):
    if mask is None:
        shifted = av - av.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
    else:
        filled = np.where(mask, av, -np.inf)
        shifted = filled - filled.max(axis=-1, keepdims=True)
        e = np.where(mask, np.exp(shifted), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_node(a, y):
    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _node(y, (a,), grad_fn)


def row_softmax(a):
    """Softmax along the last axis, stabilized by subtracting the row max."""
    return _softmax_node(a, _softmax(value_of(a), None))


def masked_row_softmax(a, mask):
    """Softmax restricted to ``mask``; masked-out entries come out as exact zeros."""
    av = value_of(a)
    mask = np.asarray(mask, dtype=bool)
    try:
        full = np.broadcast_to(mask, av.shape)
    except ValueError as exc:
        raise ShapeError(f"mask {mask.shape} does not match scores {av.shape}") from exc
    if not full.any(axis=-1).all():
        raise DegenerateRowError("mask has a row with no permitted entry")
    return _softmax_node(a, _softmax(av, full))


def linear_forward(x, w, b):
    """``x @ w + b`` with ``b`` broadcast over rows."""
    bv = value_of(b)
    wv = value_of(w)
    if bv.shape[-1] != wv.shape[-1]:
        raise ShapeError(f"bias length {bv.shape[-1]} != output width {wv.shape[-1]}")
    return add(matmul(x, w), b)


def concat(parts: Sequence, axis: int = -1):
    values = [value_of(p) for p in parts]
    out = np.concatenate(values, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tuple(parts), grad_fn)


def crop(a, rows: int, cols: int):
    """Top-left ``rows x cols`` block of the last two axes."""
    av = value_of(a)
    if rows > av.shape[-2] or cols > av.shape[-1]:
        raise ShapeError(f"cannot crop {av.shape} to {rows}x{cols}")
    out = av[..., :rows, :cols]

    def grad_fn(g):
        full = np.zeros_like(av)
        full[..., :rows, :cols] = g
        return (full,)

    return _node(out.copy(), (a,), grad_fn)


def total(a):
    av = value_of(a)
    return _node(np.asarray(av.sum()), (a,), lambda g: (np.broadcast_to(g, av.shape).copy(),))


def l1_loss(pred, target, frame_mask=None):
    """Mean absolute error over the frames selected by ``frame_mask``.

    ``pred`` and ``target`` are ``(..., L, D)``; ``frame_mask`` is ``(..., L)``.
    """
    pv, tv = value_of(pred), value_of(target)
    if pv.shape != tv.shape:
        raise ShapeError(f"l1_loss: {pv.shape} vs {tv.shape}")
    if frame_mask is None:
        weights = np.ones(pv.shape)
    else:
        weights = np.broadcast_to(np.asarray(frame_mask, dtype=np.float64)[..., None], pv.shape)
    count = weights.sum()
    if count == 0:
        raise ValueError("l1_loss: no frames selected")
    resid = pv - tv
    out = np.asarray((np.abs(resid) * weights).sum() / count)
    return _node(out, (pred,), lambda g: (g * np.sign(resid) * weights / count,))


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if isinstance(p, Var) and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Var, params: Iterable[Var], allow_unused: bool = False) -> list[Gradient]:
    """Gradients of the scalar ``loss`` with respect to each of ``params``.

    A parameter that ``loss`` does not depend on raises
    :class:`UnknownParameterError` unless ``allow_unused`` is set, in which case
    its gradient is zero.
    """
    params = list(params)
    if not isinstance(loss, Var):
        if allow_unused:
            return [Gradient(p.name, np.zeros_like(p.value)) for p in params]
        raise UnknownParameterError("loss does not depend on any tracked value")
    if loss.value.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.value.shape}")

    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node.grad_fn is None:
            continue
        for parent, pg in zip(node.parents, node.grad_fn(g)):
            if not isinstance(parent, Var):
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg

    in_graph = {id(n) for n in order}
    out = []
    for p in params:
        if id(p) not in in_graph:
            if not allow_unused:
                raise UnknownParameterError(p.name or repr(p))
            out.append(Gradient(p.name, np.zeros_like(p.value)))
        else:
            out.append(Gradient(p.name, np.asarray(grads.get(id(p), np.zeros_like(p.value)))))
    return out


def finite_difference_grad(f: Callable[[np.ndarray], float], p: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference estimate of df/dp, one entry at a time."""
    if step <= 0:
        raise ValueError("step must be positive")
    p = np.array(p, dtype=np.float64)
    grad = np.zeros_like(p)
    flat, gflat = p.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(f(p))
        flat[i] = orig - step
        lo = float(f(p))
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise EvaluationError(f"objective is not finite near entry {i}")
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def relative_error(analytic, numeric) -> float:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / denom)
