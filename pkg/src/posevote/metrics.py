"""ADD, ADD-S and threshold-swept AUC."""

from __future__ import annotations

import numpy as np

from .errors import EmptyInputError, ModelError
from .geometry import RigidPose, apply_pose

DEFAULT_MAX_THRESHOLD = 0.10  # meters


def _vertices(model) -> np.ndarray:
    v = np.asarray(getattr(model, "vertices", model), dtype=np.float64)
    if v.ndim != 2 or len(v) == 0:
        raise ModelError("model has no vertices")
    return v


def add_metric(pred: RigidPose, gt: RigidPose, model) -> float:
    """Mean distance between corresponding transformed vertices."""
    v = _vertices(model)
    return float(np.mean(np.linalg.norm(apply_pose(pred, v) - apply_pose(gt, v), axis=1)))


def closest_point_distances(a: np.ndarray, b: np.ndarray, chunk: int = 256) -> np.ndarray:
    """For each row of ``a`` the distance to the nearest row of ``b`` (exhaustive, exact differences)."""
    out = np.empty(len(a))
    for lo in range(0, len(a), chunk):
        diff = a[lo:lo + chunk, None, :] - b[None, :, :]
        out[lo:lo + chunk] = np.sqrt(np.min(np.einsum("ijk,ijk->ij", diff, diff), axis=1))
    return out


def adds_metric(pred: RigidPose, gt: RigidPose, model) -> float:
    """Mean distance from each predicted vertex to the closest ground-truth vertex."""
    v = _vertices(model)
    return float(np.mean(closest_point_distances(apply_pose(pred, v), apply_pose(gt, v))))


def add_s_mixed(pred: RigidPose, gt: RigidPose, model) -> float:
    """ADD-S for symmetric models, ADD otherwise."""
    return adds_metric(pred, gt, model) if model.symmetric else add_metric(pred, gt, model)


def success_at_diameter(distance: float, model, fraction: float = 0.1) -> bool:
    return bool(distance < fraction * model.diameter)


def auc(distances, max_threshold: float = DEFAULT_MAX_THRESHOLD) -> float:
    """Area under the accuracy-vs-threshold curve on ``[0, max_threshold]``, in percent.

    The accuracy curve is the empirical CDF of ``distances``; integrating the
    step function exactly gives ``mean(max(0, 1 - d / T))``.
    """
    d = np.asarray(distances, dtype=np.float64).reshape(-1)
    if d.size == 0:
        raise EmptyInputError("AUC of an empty distance list")
    if max_threshold <= 0:
        raise ValueError(f"max_threshold must be positive, got {max_threshold}")
    # per-distance share of the threshold range it clears, so that d = 0 gives exactly 1
    share = np.clip(1.0 - d / max_threshold, 0.0, 1.0)
    return float(100.0 * share.mean())


def accuracy_curve(distances, max_threshold: float = DEFAULT_MAX_THRESHOLD, samples: int = 101):
    """``(thresholds, accuracy)`` samples of the empirical CDF for plotting."""
    d = np.sort(np.asarray(distances, dtype=np.float64).reshape(-1))
    thresholds = np.linspace(0.0, max_threshold, samples)
    acc = np.searchsorted(d, thresholds, side="right") / max(len(d), 1)
    return thresholds, acc
