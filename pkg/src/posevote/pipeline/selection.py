"""Choosing one pose per class from the per-point candidates."""

from __future__ import annotations

import math

import numpy as np

from .. import geometry
from ..errors import MissingClassError
from ..geometry import RigidPose


def _fsum_mean(x: np.ndarray) -> np.ndarray:
    # exactly rounded mean, independent of candidate order
    return np.array([math.fsum(col) for col in x.T]) / len(x)


def mean_nearest(x: np.ndarray, order: np.ndarray) -> int:
    """Row of ``x`` nearest its mean; ties go to the smallest ``order`` key."""
    d = np.sum((x - _fsum_mean(x)) ** 2, axis=1)
    best = np.flatnonzero(d == d.min())
    return int(best[np.argmin(order[best])])


def select_pose(rotations: np.ndarray, translations: np.ndarray, labels: np.ndarray, class_id: int,
                valid: np.ndarray | None = None, point_ids: np.ndarray | None = None) -> RigidPose:
    """Pick the candidate rotation nearest the axis-angle mean, and likewise for translation.

    ``point_ids`` carry the original point indices for tie-breaking, so the
    choice does not depend on the order candidates are listed in.
    """
    labels = np.asarray(labels)
    mask = labels == class_id
    if valid is not None:
        mask &= np.asarray(valid, dtype=bool)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise MissingClassError(f"no candidate points for class {class_id}")
    ids = idx if point_ids is None else np.asarray(point_ids)[idx]
    aa = geometry.rotations_to_axis_angle(np.asarray(rotations)[idx])
    jr = mean_nearest(aa, ids)
    jt = mean_nearest(np.asarray(translations)[idx], ids)
    return RigidPose(np.array(rotations[idx[jr]]), np.array(translations[idx[jt]]))


def select_all(rotations, translations, labels, class_ids, valid=None) -> dict[int, RigidPose | None]:
    out = {}
    for c in class_ids:
        try:
            out[c] = select_pose(rotations, translations, labels, c, valid)
        except MissingClassError:
            out[c] = None
    return out
