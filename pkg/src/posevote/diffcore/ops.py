"""Differentiable operations.

Every op takes :class:`Tensor` (or array-like) inputs, computes its value with
numpy in float64 and, when recording, attaches a closure that pushes the
output gradient back to its inputs.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import scipy.sparse as sp

from ..errors import ShapeError, EmptyInputError
from .tensor import Tensor, as_tensor, decide, make_result, unbroadcast


def _grad_to(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t._accumulate(g)


# ----------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _grad_to(a, unbroadcast(g, a.shape))
        _grad_to(b, unbroadcast(g, b.shape))

    return make_result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _grad_to(a, unbroadcast(g, a.shape))
        _grad_to(b, unbroadcast(-g, b.shape))

    return make_result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(unbroadcast(g * a.data, b.shape))

    return make_result(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(unbroadcast(-g * out / b.data, b.shape))

    return make_result(out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result(-a.data, (a,), lambda g: _grad_to(a, -g))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _grad_to(a, g * exponent * a.data ** (exponent - 1))

    return make_result(a.data ** exponent, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return make_result(a.data @ b.data, (a, b), backward)


def linear(x, w, b=None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x``; leading axes are batch axes."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise ShapeError(f"linear: bias {b.shape} does not match weight {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, w.shape[0])
    y = x2 @ w.data
    if b is not None:
        y = y + b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = g.reshape(-1, w.shape[1])
        if x.requires_grad:
            x._accumulate((g2 @ w.data.T).reshape(x.shape))
        if w.requires_grad:
            w._accumulate(x2.T @ g2)
        if b is not None and b.requires_grad:
            b._accumulate(g2.sum(axis=0))

    return make_result(y.reshape(lead + (w.shape[1],)), parents, backward)


# ----------------------------------------------------------------- elementwise

def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: _grad_to(a, g * out))


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_result(np.log(a.data), (a,), lambda g: _grad_to(a, g / a.data))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return make_result(out, (a,), lambda g: _grad_to(a, g * 0.5 / out))


def abs(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    return make_result(np.abs(a.data), (a,), lambda g: _grad_to(a, g * np.sign(a.data)))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_result(out, (a,), lambda g: _grad_to(a, g * (1.0 - out * out)))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 + 0.5 * np.tanh(0.5 * x)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return make_result(out, (a,), lambda g: _grad_to(a, g * out * (1.0 - out)))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    return make_result(np.logaddexp(0.0, a.data), (a,), lambda g: _grad_to(a, g * _sigmoid(a.data)))


def mish(a) -> Tensor:
    """``x * tanh(softplus(x))``.

    Uses ``tanh(log(1 + e)) = n / (n + 2)`` with ``n = e (e + 2)``, ``e = exp(x)``,
    which needs a single exponential.
    """
    a = as_tensor(a)
    x = a.data
    e = np.exp(np.minimum(x, 20.0))
    n = e * (e + 2.0)
    t = n / (n + 2.0)
    out = x * t

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (t + x * (1.0 - t * t) * (e / (1.0 + e))))

    return make_result(out, (a,), backward)


def max_mish(a, axis: int) -> Tensor:
    """``max`` of ``mish(a)`` along ``axis``, evaluating Mish only twice per lane.

    Mish decreases and then increases, so over any set its maximum sits at
    the set's smallest or largest element. Exact ties between the two ends
    prefer the largest element.
    """
    a = as_tensor(a)
    hi = mish(reduce(a, axis, "max"))
    lo = mish(reduce(a, axis, "min"))
    take_hi = decide(lambda: hi.data >= lo.data)
    return where(take_hi, hi, lo)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return make_result(out, (a,), backward)


# ----------------------------------------------------------------- reductions

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return make_result(out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum(a, axis, keepdims) * (1.0 / count)


def reduce(a, axis: int, mode: str = "max", keepdims: bool = False) -> Tensor:
    """Max, min or average along one axis.

    Max/min route the whole gradient to the selected element; ties go to the
    lowest index.
    """
    a = as_tensor(a)
    axis = axis % a.ndim
    if a.shape[axis] == 0:
        raise EmptyInputError(f"cannot reduce over empty axis {axis}")
    if mode == "avg":
        return mean(a, axis, keepdims)
    if mode not in ("max", "min"):
        raise ValueError(f"unknown reduction mode {mode!r}")
    pick = np.argmax if mode == "max" else np.argmin
    idx = decide(lambda: pick(a.data, axis=axis))
    idx_k = np.expand_dims(idx, axis)
    out = np.take_along_axis(a.data, idx_k, axis=axis)

    def backward(g):
        if not a.requires_grad:
            return
        gk = g if keepdims else np.expand_dims(g, axis)
        full = np.zeros(a.shape)
        np.put_along_axis(full, idx_k, gk, axis=axis)
        a._accumulate(full)

    return make_result(out if keepdims else np.squeeze(out, axis), (a,), backward)


def norm(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm; the gradient at the zero vector is taken as zero."""
    a = as_tensor(a)
    out = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))

    def backward(g):
        if not a.requires_grad:
            return
        gk = g if keepdims else np.expand_dims(g, axis)
        safe = np.where(out > 0, out, 1.0)
        a._accumulate(np.where(out > 0, gk * a.data / safe, 0.0))

    return make_result(out if keepdims else np.squeeze(out, axis), (a,), backward)


# ----------------------------------------------------------------- structure

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return make_result(a.data.reshape(shape), (a,), lambda g: _grad_to(a, g.reshape(a.shape)))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return make_result(np.transpose(a.data, axes), (a,), lambda g: _grad_to(a, np.transpose(g, inv)))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    return make_result(
        np.broadcast_to(a.data, shape).copy(), (a,), lambda g: _grad_to(a, unbroadcast(g, a.shape))
    )


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, np.integer, type(None), type(Ellipsis))) for i in items)


def index(a, idx) -> Tensor:
    a = as_tensor(a)
    if isinstance(idx, Tensor):
        idx = idx.data.astype(np.int64)
    basic = _is_basic_index(idx)

    def backward(g):
        if not a.requires_grad:
            return
        full = np.zeros(a.shape)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        a._accumulate(full)

    return make_result(a.data[idx], (a,), backward)


def gather_rows(a, idx) -> Tensor:
    """``a[idx]`` for a 2-D ``a`` and an integer array ``idx`` of any shape."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    n = a.shape[0]
    out = a.data[idx]

    def backward(g):
        if not a.requires_grad:
            return
        flat = idx.reshape(-1)
        scatter = sp.csr_matrix(
            (np.ones(flat.size), (flat, np.arange(flat.size))), shape=(n, flat.size)
        )
        a._accumulate(np.asarray(scatter @ g.reshape(flat.size, -1)).reshape(a.shape))

    return make_result(out, (a,), backward)


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise EmptyInputError("concat of an empty list")
    nd = xs[0].ndim
    ax = axis % nd
    for x in xs[1:]:
        if x.ndim != nd or any(x.shape[i] != xs[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat shape mismatch: {[x.shape for x in xs]} along axis {axis}")
    sizes = [x.shape[ax] for x in xs]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if x.requires_grad:
                sl = [slice(None)] * nd
                sl[ax] = slice(lo, hi)
                x._accumulate(g[tuple(sl)])

    return make_result(np.concatenate([x.data for x in xs], axis=ax), xs, backward)


def stack(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    expanded = [reshape(x, x.shape[:axis % (x.ndim + 1)] + (1,) + x.shape[axis % (x.ndim + 1):]) for x in xs]
    return concat(expanded, axis=axis)


def cross(a, b) -> Tensor:
    """Cross product along the last axis (length 3)."""
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(unbroadcast(np.cross(b.data, g), a.shape))
        if b.requires_grad:
            b._accumulate(unbroadcast(np.cross(g, a.data), b.shape))

    return make_result(np.cross(a.data, b.data), (a, b), backward)


def normalize(a, axis: int = -1) -> Tensor:
    return a / norm(a, axis=axis, keepdims=True)


def where(mask, a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)

    def backward(g):
        if a.requires_grad:
            a._accumulate(unbroadcast(np.where(mask, g, 0.0), a.shape))
        if b.requires_grad:
            b._accumulate(unbroadcast(np.where(mask, 0.0, g), b.shape))

    return make_result(np.where(mask, a.data, b.data), (a, b), backward)
