"""Tape gradients versus central finite differences."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from ..errors import DeterminismError
from .tensor import DecisionLog, Tape, Tensor, decisions


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.max_rel_error.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def lines(self) -> list[str]:
        return [
            f"{name:40s} n={self.checked[name]:4d} max_rel_err={err:.3e} {'ok' if err <= self.tol else 'FAIL'}"
            for name, err in self.max_rel_error.items()
        ]


def _as_tensors(params) -> dict[str, Tensor]:
    if hasattr(params, "entries"):
        return {k: p.value for k, p in params.trainable()}
    return dict(params)


def grad_check(f: Callable[[], Tensor], params: Mapping[str, Tensor] | object,
               eps: float = 1e-5, tol: float = 1e-4, max_per_param: int | None = 24,
               floor: float = 1e-6, seed: int = 0,
               freeze_decisions: bool = True) -> GradCheckReport:
    """Compare tape gradients of scalar ``f()`` with central differences.

    ``params`` is a :class:`ParamStore` or a name -> Tensor mapping of leaves
    that require gradients. The relative error of one coordinate is
    ``|a - n| / max(|a|, |n|, floor)``. Each central-difference step is
    ``eps * max(1, |x|)``. With ``freeze_decisions`` the discrete choices of
    the base evaluation (max indices, neighbor tables, samples) are replayed
    while differencing. At most ``max_per_param`` coordinates per tensor are
    probed (all of them when ``None``).
    """
    tensors = _as_tensors(params)
    rng = np.random.default_rng(seed)

    def evaluate_base() -> tuple[float, DecisionLog]:
        log = DecisionLog()
        with decisions(log), Tape() as tape:
            for t in tensors.values():
                t.grad = None
            out = f()
            tape.backward(out)
        return float(out.data), log

    v1, _ = evaluate_base()
    v2, log = evaluate_base()
    if not (v1 == v2 or (np.isnan(v1) and np.isnan(v2))):
        raise DeterminismError(f"two evaluations of f differ: {v1!r} vs {v2!r}")
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in tensors.items()}

    def evaluate_at() -> float:
        if freeze_decisions:
            log.rewind()
            with decisions(log):
                return float(f().data)
        return float(f().data)

    report = GradCheckReport(tol=tol)
    for name, t in tensors.items():
        t.data = np.ascontiguousarray(t.data)
        size = t.data.size
        coords = np.arange(size)
        if max_per_param is not None and size > max_per_param:
            coords = np.sort(rng.choice(size, max_per_param, replace=False))
        flat = t.data.reshape(-1)
        worst = 0.0
        for c in coords:
            orig = flat[c]
            h = eps * max(1.0, abs(orig))
            flat[c] = orig + h
            fp = evaluate_at()
            flat[c] = orig - h
            fm = evaluate_at()
            flat[c] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = analytic[name].reshape(-1)[c]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
        report.max_rel_error[name] = worst
        report.checked[name] = len(coords)
    for t in tensors.values():
        t.grad = None
    return report
