"""Tensor type and the reverse-mode tape.

Operations record themselves on the innermost active :class:`Tape` when at
least one input requires a gradient. Outside a tape nothing is recorded, so
inference runs at plain numpy cost. Tape order is creation order, which is
already a topological order, so backward is a single reversed sweep.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

_TAPES: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    # keep numpy from hijacking ``ndarray <op> Tensor``
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return len(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __pow__(self, exponent: float):
        from . import ops
        return ops.power(self, exponent)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.index(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.mean(self, axis, keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Records differentiable operations for one reverse sweep."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, out: Tensor, seed: np.ndarray | None = None) -> None:
        if seed is None:
            if out.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            seed = np.ones_like(out.data)
        out._accumulate(np.asarray(seed, dtype=np.float64))
        for node in reversed(self.nodes):
            if node.grad is None or node._backward is None:
                continue
            node._backward(node.grad)
            # intermediate gradients are not needed once propagated
            if node is not out:
                node.grad = None
        self.nodes.clear()


def recording() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


@contextlib.contextmanager
def no_grad():
    saved = _TAPES[:]
    _TAPES.clear()
    try:
        yield
    finally:
        _TAPES[:] = saved


def make_result(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward: Callable[[np.ndarray], None],
) -> Tensor:
    """Wrap an op output, recording it when a tape is live and any parent needs grad."""
    out = Tensor(data)
    tape = recording()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        tape.nodes.append(out)
    return out


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class DecisionLog:
    """Records discrete choices (argmax, k-NN tables, samples) for later replay.

    Finite-difference checks replay the choices of the base evaluation so the
    function being differenced is the smooth branch active at that point.
    """

    def __init__(self):
        self.choices: list[np.ndarray] = []
        self.replaying = False
        self._cursor = 0

    def rewind(self) -> None:
        self.replaying = True
        self._cursor = 0

    def take(self, compute: Callable[[], np.ndarray]) -> np.ndarray:
        if not self.replaying:
            value = compute()
            self.choices.append(value)
            return value
        if self._cursor >= len(self.choices):
            raise RuntimeError("replayed evaluation made more discrete decisions than recorded")
        value = self.choices[self._cursor]
        self._cursor += 1
        return value


_DECISIONS: list[DecisionLog] = []


@contextlib.contextmanager
def decisions(log: DecisionLog):
    _DECISIONS.append(log)
    try:
        yield log
    finally:
        _DECISIONS.remove(log)


def decide(compute: Callable[[], np.ndarray]) -> np.ndarray:
    """Make a discrete choice, routed through the active :class:`DecisionLog` if any."""
    if _DECISIONS:
        return _DECISIONS[-1].take(compute)
    return compute()
