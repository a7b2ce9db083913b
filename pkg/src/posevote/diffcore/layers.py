"""Small parameterized building blocks over :class:`ParamStore`."""

from __future__ import annotations

import numpy as np

from . import ops
from .params import ParamStore, glorot
from .tensor import Tensor


class Dense:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator, bias: bool = True, zero: bool = False):
        w = glorot(rng, d_in, d_out)
        self.w = store.add(f"{name}.w", np.zeros_like(w) if zero else w)
        self.b = store.add(f"{name}.b", np.zeros(d_out)) if bias else None
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x) -> Tensor:
        return ops.linear(x, self.w, self.b)


class Norm:
    """Per-channel normalization over all leading (point) axes.

    Training uses the statistics of the current input and updates running
    estimates; evaluation uses the frozen running estimates.
    """

    def __init__(self, store: ParamStore, name: str, channels: int,
                 momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = store.add(f"{name}.gamma", np.ones(channels))
        self.beta = store.add(f"{name}.beta", np.zeros(channels))
        self.running_mean = store.add(f"{name}.running_mean", np.zeros(channels), trainable=False)
        self.running_var = store.add(f"{name}.running_var", np.ones(channels), trainable=False)
        self.momentum = momentum
        self.eps = eps
        self.training = True

    def __call__(self, x) -> Tensor:
        x = ops.reshape(x, (-1, x.shape[-1])) if x.ndim != 2 else x
        if self.training:
            mu = ops.mean(x, axis=0, keepdims=True)
            centered = x - mu
            var = ops.mean(centered * centered, axis=0, keepdims=True)
            n = x.shape[0]
            m = self.momentum
            self.running_mean.data = (1 - m) * self.running_mean.data + m * mu.data[0]
            unbiased = var.data[0] * (n / max(n - 1, 1))
            self.running_var.data = (1 - m) * self.running_var.data + m * unbiased
            xhat = centered / ops.sqrt(var + self.eps)
        else:
            xhat = (x - self.running_mean.data) / np.sqrt(self.running_var.data + self.eps)
        return xhat * self.gamma + self.beta


class ConvBlock:
    """Shared per-point linear map, normalization and Mish."""

    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator, norm: bool = True):
        self.dense = Dense(store, f"{name}.lin", d_in, d_out, rng, bias=not norm)
        self.norm = Norm(store, f"{name}.bn", d_out) if norm else None
        self.d_out = d_out

    def __call__(self, x) -> Tensor:
        lead = x.shape[:-1]
        h = self.dense(x)
        if self.norm is not None:
            h = self.norm(h)
            if len(lead) != 1:
                h = ops.reshape(h, lead + (self.d_out,))
        return ops.mish(h)

    def modules(self):
        return [self.norm] if self.norm is not None else []


class MLP:
    """Stack of :class:`ConvBlock` layers followed by a plain linear output.

    ``zero_out`` starts the output layer at zero, for heads that predict a
    residual.
    """

    def __init__(self, store: ParamStore, name: str, widths: list[int], d_out: int,
                 rng: np.random.Generator, norm: bool = True, zero_out: bool = False):
        self.blocks = [
            ConvBlock(store, f"{name}.{i}", a, b, rng, norm=norm)
            for i, (a, b) in enumerate(zip(widths[:-1], widths[1:]))
        ]
        self.out = Dense(store, f"{name}.out", widths[-1], d_out, rng, zero=zero_out)

    def __call__(self, x) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return self.out(x)


def set_training(modules, training: bool) -> None:
    for m in modules:
        if isinstance(m, Norm):
            m.training = training
