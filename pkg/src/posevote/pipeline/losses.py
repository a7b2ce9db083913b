"""Training losses: segmentation, keypoint votes, pose candidates, weighted total."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Mapping, NamedTuple

import numpy as np

from ..diffcore import ops
from ..diffcore.tensor import Tensor, as_tensor, decide
from ..errors import ModelError, SanityError
from ..geometry import RigidPose

PAIRS = np.array(list(combinations(range(8), 2)))  # the 28 pairs i < j


class LossTerm(NamedTuple):
    value: Tensor
    count: int       # contributing terms in the normalization
    skipped: int = 0  # terms dropped as undefined


def _zero() -> Tensor:
    return Tensor(0.0)


def loss_kp(offsets, gt_offsets: np.ndarray, labels: np.ndarray) -> LossTerm:
    """Mean L1 keypoint error over foreground (point, keypoint) pairs."""
    offsets = as_tensor(offsets)
    fg = np.flatnonzero(np.asarray(labels) > 0)
    if fg.size == 0:
        return LossTerm(_zero(), 0)
    diff = ops.gather_rows(ops.reshape(offsets, (offsets.shape[0], -1)), fg) - gt_offsets[fg].reshape(len(fg), -1)
    count = fg.size * offsets.shape[1]
    return LossTerm(ops.sum(ops.abs(diff)) * (1.0 / count), count)


def pair_vectors(kp):
    """Vectors from keypoint ``i`` to keypoint ``j`` for the 28 pairs; works on arrays and tensors."""
    if isinstance(kp, Tensor):
        return ops.index(kp, (slice(None), PAIRS[:, 1])) - ops.index(kp, (slice(None), PAIRS[:, 0]))
    kp = np.asarray(kp)
    return kp[:, PAIRS[:, 1]] - kp[:, PAIRS[:, 0]]


def loss_geom(offsets, gt_offsets: np.ndarray, labels: np.ndarray, tiny: float = 1e-12) -> LossTerm:
    """Mean ``1 - cos`` between predicted and true inter-keypoint directions.

    Offsets share the voting point as origin, so pair vectors of offsets equal
    pair vectors of absolute keypoints. Pairs with a zero-length vector on
    either side are skipped and counted.
    """
    offsets = as_tensor(offsets)
    fg = np.flatnonzero(np.asarray(labels) > 0)
    if fg.size == 0:
        return LossTerm(_zero(), 0)
    pred = pair_vectors(ops.gather_rows(ops.reshape(offsets, (offsets.shape[0], -1)), fg).reshape(len(fg), 8, 3))
    true = pair_vectors(gt_offsets[fg])
    pn = np.linalg.norm(pred.data, axis=2)
    tn = np.linalg.norm(true, axis=2)
    ok = (pn > tiny) & (tn > tiny)
    count = int(ok.sum())
    skipped = int(ok.size - count)
    if count == 0:
        return LossTerm(_zero(), 0, skipped)
    unit_true = np.where(ok[..., None], true / np.where(tn > tiny, tn, 1.0)[..., None], 0.0)
    safe_pred = ops.where(ok[..., None], pred, np.ones(3))
    cos = ops.sum(safe_pred * unit_true, axis=2) / ops.norm(safe_pred, axis=2)
    terms = ops.where(ok, 1.0 - cos, 0.0)
    return LossTerm(ops.sum(terms) * (1.0 / count), count, skipped)


def loss_seg(logits, labels: np.ndarray, gamma_f: float = 2.0, alpha_f: float = 1.0) -> LossTerm:
    """Mean focal loss ``-alpha (1 - p_t)^gamma log p_t`` over points."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    logp = ops.log_softmax(logits, axis=1)
    logp_t = ops.index(logp, (np.arange(n), labels))
    if gamma_f == 0:
        per_point = -alpha_f * logp_t
    else:
        weight = ops.power(1.0 - ops.exp(logp_t), gamma_f)
        per_point = -alpha_f * weight * logp_t
    return LossTerm(ops.mean(per_point), n)


def loss_t(translations, gt_poses: Mapping[int, RigidPose], labels: np.ndarray) -> LossTerm:
    """Mean per-point L1 translation error over foreground points."""
    translations = as_tensor(translations)
    labels = np.asarray(labels)
    fg = np.flatnonzero(labels > 0)
    if fg.size == 0:
        return LossTerm(_zero(), 0)
    target = np.stack([gt_poses[int(c)].translation for c in labels[fg]])
    diff = ops.gather_rows(translations, fg) - target
    return LossTerm(ops.sum(ops.abs(diff)) * (1.0 / fg.size), int(fg.size))


TIE_TOL = 1e-12


def matrix_mean_nearest(rotations: np.ndarray) -> int:
    """Index of the rotation closest (Frobenius) to the elementwise mean.

    Distances within ``TIE_TOL`` of the minimum count as tied and the first
    index wins; two candidates, for instance, are always equidistant from
    their mean and only rounding would otherwise separate them.
    """
    mean = rotations.mean(axis=0)
    d = np.sum((rotations - mean) ** 2, axis=(1, 2))
    return int(np.flatnonzero(d <= d.min() + TIE_TOL)[0])


def rotation_shape_loss(R, R_gt: np.ndarray, vertices: np.ndarray, symmetric: bool) -> Tensor:
    """Mean vertex displacement under ``R`` vs ``R_gt``; closest-vertex matching when symmetric."""
    R = as_tensor(R)
    if vertices.ndim != 2 or len(vertices) == 0:
        raise ModelError("empty model vertex set")
    moved = ops.matmul(vertices, ops.transpose(R))  # (m, 3)
    target = vertices @ R_gt.T
    if symmetric:
        def closest():
            d = moved.data[:, None, :] - target[None, :, :]
            return np.argmin(np.einsum("ijk,ijk->ij", d, d), axis=1)
        match = decide(closest)
        target = target[match]
    return ops.mean(ops.norm(moved - target, axis=1))


def loss_R(rotations, labels: np.ndarray, gt_poses: Mapping[int, RigidPose], models: Mapping,
           valid: np.ndarray | None = None) -> LossTerm:
    """Sum over classes of the shape loss of the candidate nearest the class's matrix mean."""
    rotations = as_tensor(rotations)
    labels = np.asarray(labels)
    if valid is None:
        valid = np.ones(len(labels), dtype=bool)
    total = _zero()
    count = 0
    for c in sorted(int(k) for k in np.unique(labels) if k > 0):
        idx = np.flatnonzero((labels == c) & valid)
        if idx.size == 0:
            continue
        model = models[c]
        j = decide(lambda: np.array(matrix_mean_nearest(rotations.data[idx])))
        R_c = ops.index(rotations, int(idx[int(j)]))
        total = total + rotation_shape_loss(R_c, gt_poses[c].rotation, np.asarray(model.vertices), model.symmetric)
        count += 1
    return LossTerm(total, count)


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 2.0
    beta: float = 1.0
    gamma: float = 1.0
    mu: float = 2.0
    delta_low: float = 0.01
    delta_high: float = 1.0
    delta_switch_epoch: int = 20

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "mu", "delta_low", "delta_high"):
            if getattr(self, name) < 0:
                raise SanityError(f"loss weight {name} must be nonnegative")

    def delta(self, epoch: int) -> float:
        if epoch < 0:
            raise SanityError(f"epoch must be nonnegative, got {epoch}")
        return self.delta_low if epoch < self.delta_switch_epoch else self.delta_high


COMPONENTS = ("seg", "kp", "geom", "R", "t")


def total_loss(components: Mapping, weights: LossWeights, epoch: int):
    """``alpha·seg + beta·kp + gamma·geom + delta(epoch)·(R + mu·t)``.

    Components may be floats or tensors; the result has the same kind.
    """
    for name in COMPONENTS:
        v = components[name]
        val = float(v.data) if isinstance(v, Tensor) else float(v)
        if val < 0:
            raise SanityError(f"loss component {name} is negative ({val})")
    d = weights.delta(epoch)
    c = components
    return (weights.alpha * c["seg"] + weights.beta * c["kp"] + weights.gamma * c["geom"]
            + d * (c["R"] + weights.mu * c["t"]))
