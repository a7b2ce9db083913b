"""Rotations, rigid transforms, rigid alignment and point-set utilities.

Point sets are ``(n, 3)`` float arrays (``(n, d)`` for k-NN). Rotations are
plain ``(3, 3)`` arrays; :class:`RigidPose` pairs one with a translation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DegenerateRotationError, RankDeficiencyError

DEGENERATE_NORM = 1e-9
DEGENERATE_COS = 1.0 - 1e-9


@dataclass
class RigidPose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    def compose(self, other: "RigidPose") -> "RigidPose":
        """Return ``self ∘ other`` (apply ``other`` first)."""
        return RigidPose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidPose":
        rt = self.rotation.T
        return RigidPose(rt, -rt @ self.translation)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def is_rotation(R: np.ndarray, tol: float = 1e-6) -> bool:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    ortho = np.max(np.abs(R.T @ R - np.eye(3)))
    return bool(ortho < tol and abs(np.linalg.det(R) - 1.0) < tol)


def check_rotation_6d(r1: np.ndarray, r2: np.ndarray) -> None:
    """Raise :class:`DegenerateRotationError` if ``(r1, r2)`` cannot be orthogonalized."""
    n1 = np.linalg.norm(r1)
    n2 = np.linalg.norm(r2)
    if not (np.isfinite(n1) and np.isfinite(n2)):
        raise DegenerateRotationError("non-finite 6D rotation columns")
    if n1 <= DEGENERATE_NORM or n2 <= DEGENERATE_NORM:
        raise DegenerateRotationError(f"near-zero 6D rotation column (norms {n1:.3g}, {n2:.3g})")
    cos = abs(float(np.dot(r1, r2))) / (n1 * n2)
    if cos >= DEGENERATE_COS:
        raise DegenerateRotationError(f"near-parallel 6D rotation columns (|cos| = {cos:.12f})")


def recover_rotation_6d(r1, r2=None) -> np.ndarray:
    """Map two (not necessarily orthonormal) columns back onto SO(3).

    ``r1`` may also be a length-6 vector holding both columns. The first
    column is normalized, the third is the normalized cross product of the
    first with ``r2`` and the second completes a right-handed frame.
    """
    r1 = np.asarray(r1, dtype=np.float64)
    if r2 is None:
        r1, r2 = r1[:3], r1[3:6]
    r2 = np.asarray(r2, dtype=np.float64)
    check_rotation_6d(r1, r2)
    c1 = r1 / np.linalg.norm(r1)
    c3 = np.cross(c1, r2)
    c3 = c3 / np.linalg.norm(c3)
    c2 = np.cross(c3, c1)
    return np.stack([c1, c2, c3], axis=1)


def recover_rotation_6d_batch(r6: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`recover_rotation_6d` over ``(n, 6)`` inputs.

    Returns ``(rotations, valid)``; degenerate rows get the identity and
    ``valid[i] = False``.
    """
    r6 = np.asarray(r6, dtype=np.float64)
    a, b = r6[:, :3], r6[:, 3:6]
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.abs(np.einsum("ij,ij->i", a, b)) / (na * nb)
    valid = (
        np.isfinite(na) & np.isfinite(nb)
        & (na > DEGENERATE_NORM) & (nb > DEGENERATE_NORM)
        & (cos < DEGENERATE_COS)
    )
    out = np.tile(np.eye(3), (len(r6), 1, 1))
    if np.any(valid):
        c1 = a[valid] / na[valid, None]
        c3 = np.cross(c1, b[valid])
        c3 /= np.linalg.norm(c3, axis=1, keepdims=True)
        c2 = np.cross(c3, c1)
        out[valid] = np.stack([c1, c2, c3], axis=2)
    return out, valid


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def axis_angle_to_rotation(v) -> np.ndarray:
    """Rodrigues formula."""
    v = np.asarray(v, dtype=np.float64).reshape(3)
    theta = np.linalg.norm(v)
    if theta < 1e-12:
        # second-order expansion keeps tiny rotations orthonormal to rounding
        K = _skew(v)
        return np.eye(3) + K + 0.5 * K @ K
    K = _skew(v / theta)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def rotation_to_axis_angle(R) -> np.ndarray:
    """Canonical rotation vector with angle in ``[0, pi]``."""
    R = np.asarray(R, dtype=np.float64)
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    sin2 = np.linalg.norm(w)  # = 2 sin(theta)
    theta = np.arctan2(sin2 / 2.0, cos)
    if theta < 1e-7:
        return w / 2.0
    if np.pi - theta > 1e-4:
        return w * (theta / sin2)
    # near the antipode the skew part vanishes; read the axis off (R + I) / 2 = a a^T
    B = (R + np.eye(3)) / 2.0
    i = int(np.argmax(np.diag(B)))
    axis = B[:, i] / np.sqrt(B[i, i])
    if np.dot(axis, w) < 0:
        axis = -axis
    axis /= np.linalg.norm(axis)
    if sin2 > 0:
        # refine the angle from both the symmetric and the skew part
        theta = np.arctan2(np.dot(axis, w) / 2.0, cos)
    return axis * theta


def rotations_to_axis_angle(Rs: np.ndarray) -> np.ndarray:
    return np.stack([rotation_to_axis_angle(R) for R in Rs]) if len(Rs) else np.zeros((0, 3))


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    return axis_angle_to_rotation(axis / np.linalg.norm(axis) * angle)


def apply_pose(pose: RigidPose, points) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    return points @ pose.rotation.T + pose.translation


def umeyama_fit(src, dst) -> RigidPose:
    """Least-squares rigid transform (unit scale) taking ``src`` onto ``dst``."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise RankDeficiencyError(f"mismatched correspondence shapes {src.shape} vs {dst.shape}")
    if len(src) < 3:
        raise RankDeficiencyError(f"need at least 3 correspondences, got {len(src)}")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    scale = max(np.abs(xs).max(), np.abs(xd).max(), 1e-300)
    for x in (xs, xd):
        sv = np.linalg.svd(x, compute_uv=False)
        if sv[1] <= 1e-10 * scale * np.sqrt(len(x)):
            raise RankDeficiencyError("collinear or coincident correspondences")
    H = xd.T @ xs
    U, S, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(U @ Vt))
    D = np.diag([1.0, 1.0, d if d != 0 else 1.0])
    R = U @ D @ Vt
    t = mu_d - R @ mu_s
    return RigidPose(R, t)


def farthest_point_sample(points, m: int, start: int = 0) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if m > n:
        raise ConfigurationError(f"cannot sample {m} points from {n}")
    if m <= 0:
        return np.zeros(0, dtype=np.int64)
    if not 0 <= start < n:
        raise ConfigurationError(f"start index {start} out of range for {n} points")
    picked = np.empty(m, dtype=np.int64)
    picked[0] = start
    dist = np.linalg.norm(points - points[start], axis=1)
    dist[start] = -1.0
    for j in range(1, m):
        nxt = int(np.argmax(dist))  # first maximum: lowest index wins ties
        picked[j] = nxt
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
        dist[picked[: j + 1]] = -1.0
    return picked


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aa = np.einsum("ij,ij->i", a, a)
    bb = np.einsum("ij,ij->i", b, b)
    d = aa[:, None] + bb[None, :] - 2.0 * (a @ b.T)
    np.maximum(d, 0.0, out=d)
    return d


def knn(points, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest other points, nearest first.

    Ties are broken by lower index.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if points.ndim == 1:
        points = points[:, None]
    if k >= n:
        raise ConfigurationError(f"k={k} must be smaller than the point count {n}")
    if k <= 0:
        raise ConfigurationError(f"k must be positive, got {k}")
    d = pairwise_sq_dists(points, points)
    np.fill_diagonal(d, np.inf)
    if k < n - 1:
        # over-select so that boundary ties can be resolved by index
        cand = np.argpartition(d, k, axis=1)[:, : k + 1]
    else:
        cand = np.broadcast_to(np.arange(n), (n, n)).copy()
    cd = np.take_along_axis(d, cand, axis=1)
    order = np.lexsort((cand, cd), axis=1)
    cand = np.take_along_axis(cand, order, axis=1)
    cd = np.take_along_axis(cd, order, axis=1)
    if k < n - 1:
        # a tie at the k-th distance may hide lower-index points outside the candidate set
        kth = cd[:, k - 1]
        tied_rows = np.flatnonzero(np.sum(d <= kth[:, None], axis=1) > k)
        for i in tied_rows:
            full = np.lexsort((np.arange(n), d[i]))
            cand[i, :k] = full[:k]
    return cand[:, :k].astype(np.int64)
