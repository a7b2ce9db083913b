"""Named parameter storage with gradient and optimizer slots."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from ..errors import ConfigurationError
from .tensor import Tensor


@dataclass
class Param:
    value: Tensor
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    trainable: bool = True

    @property
    def grad(self) -> np.ndarray | None:
        return self.value.grad


@dataclass
class ParamStore:
    """Ordered mapping of unique names to parameters.

    Non-trainable entries (normalization running statistics) ride along so
    that checkpoints capture the full model state.
    """

    entries: dict[str, Param] = field(default_factory=dict)

    def add(self, name: str, value, trainable: bool = True) -> Tensor:
        if name in self.entries:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        data = np.array(value, dtype=np.float64)
        t = Tensor(data, requires_grad=trainable, name=name)
        self.entries[name] = Param(t, np.zeros_like(data), np.zeros_like(data), 0, trainable)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.entries[name].value

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __iter__(self) -> Iterator[str]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def trainable(self) -> Iterator[tuple[str, Param]]:
        return ((k, p) for k, p in self.entries.items() if p.trainable)

    def zero_grad(self) -> None:
        for p in self.entries.values():
            p.value.grad = None

    def n_values(self) -> int:
        return int(sum(p.value.data.size for _, p in self.trainable()))

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.value.data.copy() for k, p in self.entries.items()}


def glorot(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=(d_in, d_out))
