"""Synthetic object models and multi-object scenes with exact ground truth."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import ConvexHull

from .errors import ConfigurationError, ParseError, VersionError
from .geometry import (
    RigidPose,
    apply_pose,
    axis_angle_to_rotation,
    farthest_point_sample,
    pairwise_sq_dists,
    rotation_about_axis,
)

log = logging.getLogger(__name__)

SHAPES = ("box", "cylinder-approx", "random-blob")
WORKSPACE_HALF = 0.5
BACKGROUND = 0


@dataclass
class ObjectModel:
    class_id: int
    shape: str
    vertices: np.ndarray
    keypoints: np.ndarray
    diameter: float
    symmetric: bool
    symmetries: list[np.ndarray] = field(default_factory=lambda: [np.eye(3)])
    color: np.ndarray = field(default_factory=lambda: np.full(3, 0.5))

    @property
    def half_extent(self) -> np.ndarray:
        return np.maximum(np.abs(self.vertices).max(axis=0), 1e-9)

    @property
    def radius(self) -> float:
        return float(np.linalg.norm(self.vertices, axis=1).max())

    def surface_color(self, model_points: np.ndarray) -> np.ndarray:
        """Texture: the class color shaded by position in the model frame."""
        shade = 0.5 + 0.5 * model_points / self.half_extent
        return np.clip(0.5 * self.color + 0.5 * shade, 0.0, 1.0)

    def to_json(self) -> dict:
        return {
            "format": "posevote-model",
            "version": 1,
            "class_id": self.class_id,
            "shape": self.shape,
            "symmetric": self.symmetric,
            "diameter": self.diameter,
            "color": self.color.tolist(),
            "vertices": self.vertices.tolist(),
            "keypoints": self.keypoints.tolist(),
            "symmetries": [g.tolist() for g in self.symmetries],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ObjectModel":
        if obj.get("format") != "posevote-model":
            raise ParseError("not a model file")
        if obj.get("version") != 1:
            raise VersionError(f"unsupported model file version {obj.get('version')}")
        return cls(
            class_id=int(obj["class_id"]),
            shape=obj["shape"],
            vertices=np.array(obj["vertices"], dtype=np.float64),
            keypoints=np.array(obj["keypoints"], dtype=np.float64),
            diameter=float(obj["diameter"]),
            symmetric=bool(obj["symmetric"]),
            symmetries=[np.array(g, dtype=np.float64) for g in obj["symmetries"]],
            color=np.array(obj["color"], dtype=np.float64),
        )


# ---------------------------------------------------------------- meshes

def _box_mesh(dims) -> tuple[np.ndarray, np.ndarray]:
    h = np.asarray(dims, dtype=np.float64) / 2.0
    corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]) * h
    faces = np.array([
        [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],  # x = -/+
        [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],  # y = -/+
        [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],  # z = -/+
    ])
    return corners, faces


def _prism_mesh(radius: float, height: float, sides: int) -> tuple[np.ndarray, np.ndarray]:
    ang = 2 * np.pi * np.arange(sides) / sides
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    lo = np.column_stack([ring, np.full(sides, -height / 2)])
    hi = np.column_stack([ring, np.full(sides, height / 2)])
    verts = np.vstack([lo, hi, [[0, 0, -height / 2]], [[0, 0, height / 2]]])
    faces = []
    for i in range(sides):
        j = (i + 1) % sides
        faces += [[i, j, sides + j], [i, sides + j, sides + i]]
        faces += [[2 * sides, j, i], [2 * sides + 1, sides + i, sides + j]]
    return verts, np.array(faces)


def _blob_mesh(rng: np.random.Generator, scale: float, n_dirs: int = 160) -> tuple[np.ndarray, np.ndarray]:
    # Fibonacci directions; a smooth random radius keeps the surface star-shaped
    i = np.arange(n_dirs) + 0.5
    phi = np.arccos(1 - 2 * i / n_dirs)
    theta = np.pi * (1 + 5 ** 0.5) * i
    dirs = np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])
    coef = rng.normal(0.0, 0.12, size=9)
    x, y, z = dirs.T
    basis = np.column_stack([x, y, z, x * y, y * z, z * x, x * x - y * y, 3 * z * z - 1, x * y * z])
    r = scale * np.exp(basis @ coef)
    aniso = np.array([1.25, 0.9, 0.75])
    faces = ConvexHull(dirs).simplices
    return dirs * r[:, None] * aniso, faces


def _sample_surface(verts: np.ndarray, faces: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    tri = rng.choice(len(faces), size=n, p=area / area.sum())
    u, v = rng.random(n), rng.random(n)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    return a[tri] + u[:, None] * (b[tri] - a[tri]) + v[:, None] * (c[tri] - a[tri])


def _z_rotations(order: int) -> list[np.ndarray]:
    out = []
    for k in range(order):
        g = rotation_about_axis([0, 0, 1], 2 * np.pi * k / order)
        # quarter and half turns become exact sign/permutation matrices
        whole = np.round(g)
        out.append(np.where(np.abs(g - whole) < 1e-12, whole, g))
    return out


def _orbit(points: np.ndarray, group: list[np.ndarray]) -> np.ndarray:
    return np.vstack([points @ g.T for g in group])


def _diameter(vertices: np.ndarray, chunk: int = 128) -> float:
    """Largest pairwise distance, from exact coordinate differences."""
    best = 0.0
    for lo in range(0, len(vertices), chunk):
        diff = vertices[lo:lo + chunk, None, :] - vertices[None, :, :]
        best = max(best, float(np.sqrt(np.einsum("ijk,ijk->ij", diff, diff).max())))
    return best


def make_object_model(shape: str, class_id: int, symmetric: bool = False, n_vertices: int = 512,
                      seed: int = 0, size: float = 0.1, dims=None, sides: int = 12,
                      symmetry_order: int | None = None, color=None) -> ObjectModel:
    """Build a deterministic synthetic model.

    Vertices are area-weighted surface samples (boxes also carry their 8
    corners). Symmetric models are closed under their declared rotations
    about the model z axis by construction: a fundamental sample set is
    completed into its orbit. ``size`` is the nominal largest dimension in
    meters; ``dims`` overrides the box dimensions.
    """
    if shape not in SHAPES:
        raise ConfigurationError(f"unknown shape {shape!r}; expected one of {SHAPES}")
    if n_vertices < 8:
        raise ConfigurationError(f"need at least 8 vertices, got {n_vertices}")
    rng = np.random.default_rng(seed)
    fixed = np.zeros((0, 3))
    if shape == "box":
        box_dims = np.array(dims if dims is not None else (size, 0.7 * size, 0.4 * size), dtype=np.float64)
        verts, faces = _box_mesh(box_dims)
        fixed = verts
        order = symmetry_order or 2
    elif shape == "cylinder-approx":
        verts, faces = _prism_mesh(0.35 * size, size, sides)
        order = symmetry_order or sides
    else:
        verts, faces = _blob_mesh(rng, 0.45 * size)
        # a symmetric blob is the union of the blob and its rotated copies
        order = symmetry_order or 2
    group = _z_rotations(order) if symmetric else [np.eye(3)]
    budget = n_vertices - len(fixed)
    if len(group) > budget:
        raise ConfigurationError(
            f"symmetry orbit of size {len(group)} exceeds the vertex budget {n_vertices}"
        )
    base = _sample_surface(verts, faces, budget // len(group), rng)
    samples = _orbit(base, group)
    vertices = np.vstack([fixed, samples])
    keypoints = vertices[farthest_point_sample(vertices, 8, 0)]
    diameter = _diameter(vertices)
    if color is None:
        color = np.random.default_rng(1000 + class_id).uniform(0.1, 0.9, size=3)
    return ObjectModel(
        class_id=class_id,
        shape=shape,
        vertices=vertices,
        keypoints=keypoints,
        diameter=diameter,
        symmetric=symmetric,
        symmetries=group,
        color=np.asarray(color, dtype=np.float64),
    )


def symmetry_permutation(model: ObjectModel, g: np.ndarray, tol: float = 1e-9) -> np.ndarray | None:
    """Vertex permutation induced by ``g``, or ``None`` if ``g`` does not map the set onto itself."""
    moved = model.vertices @ np.asarray(g).T
    d = pairwise_sq_dists(moved, model.vertices)
    perm = np.argmin(d, axis=1)
    # the expanded squared distances lose precision near zero; check matches directly
    if np.linalg.norm(moved - model.vertices[perm], axis=1).max() > tol:
        return None
    if len(np.unique(perm)) != len(perm):
        return None
    return perm


def default_models(seed: int = 0, n_vertices: int = 512) -> list[ObjectModel]:
    """Three classes for the desk-scale experiment; the prism is symmetric."""
    return [
        make_object_model("box", 1, symmetric=False, n_vertices=n_vertices, seed=seed, size=0.10,
                          color=(0.9, 0.2, 0.2)),
        make_object_model("cylinder-approx", 2, symmetric=True, n_vertices=n_vertices, seed=seed + 1,
                          size=0.10, sides=8, color=(0.2, 0.8, 0.2)),
        make_object_model("random-blob", 3, symmetric=False, n_vertices=n_vertices, seed=seed + 2,
                          size=0.10, color=(0.2, 0.3, 0.9)),
    ]


# ---------------------------------------------------------------- scenes

@dataclass
class SyntheticScene:
    points: np.ndarray            # (n, 3)
    colors: np.ndarray            # (n, 3)
    labels: np.ndarray            # (n,) int, 0 = background
    keypoint_offsets: np.ndarray  # (n, 8, 3); zero on background
    poses: dict[int, RigidPose]
    seed: int
    scene_id: str = ""

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def class_ids(self) -> list[int]:
        return sorted(self.poses)

    def keypoint_targets(self) -> np.ndarray:
        return self.points[:, None, :] + self.keypoint_offsets


def random_rotation(rng: np.random.Generator, max_angle: float = np.pi) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return axis_angle_to_rotation(axis * rng.uniform(0.0, max_angle))


def _sample_poses(models: Sequence[ObjectModel], rng: np.random.Generator, max_angle: float,
                  workspace: float) -> dict[int, RigidPose]:
    radii = [m.radius for m in models]
    for _ in range(1000):
        centers = [rng.uniform(-(workspace - r), workspace - r, size=3) for r in radii]
        if all(
            np.linalg.norm(centers[i] - centers[j]) > 1.2 * (radii[i] + radii[j])
            for i in range(len(models)) for j in range(i)
        ):
            break
    else:
        raise ConfigurationError("could not place objects without overlap in the workspace")
    return {m.class_id: RigidPose(random_rotation(rng, max_angle), c) for m, c in zip(models, centers)}


def _visible(posed: np.ndarray, center: np.ndarray, occlusion: float, rng: np.random.Generator) -> np.ndarray:
    if occlusion <= 0:
        return np.ones(len(posed), dtype=bool)
    az = np.arctan2(posed[:, 1] - center[1], posed[:, 0] - center[0])
    start = rng.uniform(-np.pi, np.pi)
    rel = np.mod(az - start, 2 * np.pi)
    return rel >= 2 * np.pi * occlusion


def generate_scene(models: Sequence[ObjectModel], poses: dict[int, RigidPose] | None = None,
                   n_points: int = 1024, noise_sigma: float = 0.002, occlusion_fraction: float = 0.0,
                   background_fraction: float = 0.2, seed: int = 0, max_angle: float = np.pi,
                   workspace: float = WORKSPACE_HALF, scene_id: str = "") -> SyntheticScene:
    """Sample a scene as a pure function of its arguments.

    Foreground points are posed model vertices plus isotropic Gaussian noise;
    keypoint offsets are taken from the noisy points to the exact posed
    keypoints. Occlusion removes a contiguous azimuthal sector (about the
    world z axis through the object center) of each object.
    """
    if n_points < 8 * len(models):
        raise ConfigurationError(f"need at least {8 * len(models)} points for {len(models)} objects")
    rng = np.random.default_rng(seed)
    if poses is None:
        poses = _sample_poses(models, rng, max_angle, workspace)
    n_bg = int(round(background_fraction * n_points))
    n_fg = n_points - n_bg
    share = [n_fg // len(models)] * len(models)
    share[-1] += n_fg - sum(share)

    pts, cols, labs, offs = [], [], [], []
    for model, count in zip(models, share):
        pose = poses[model.class_id]
        posed = apply_pose(pose, model.vertices)
        for attempt in range(10):
            visible = np.flatnonzero(_visible(posed, pose.translation, occlusion_fraction, rng))
            if len(visible):
                break
            log.warning("occlusion removed every point of class %d; resampling (attempt %d)",
                        model.class_id, attempt + 1)
        else:
            raise ConfigurationError(f"occlusion removed all points of class {model.class_id} ten times")
        pick = rng.choice(visible, size=count, replace=count > len(visible))
        exact = posed[pick]
        noisy = exact + rng.normal(0.0, noise_sigma, size=exact.shape) if noise_sigma > 0 else exact
        kp = apply_pose(pose, model.keypoints)
        pts.append(noisy)
        cols.append(model.surface_color(model.vertices[pick]))
        labs.append(np.full(count, model.class_id, dtype=np.int64))
        offs.append(kp[None, :, :] - noisy[:, None, :])

    if n_bg:
        bg = np.zeros((0, 3))
        centers = np.array([poses[m.class_id].translation for m in models])
        radii = np.array([m.radius for m in models])
        while len(bg) < n_bg:
            cand = rng.uniform(-workspace, workspace, size=(2 * n_bg, 3))
            dist = np.sqrt(pairwise_sq_dists(cand, centers))
            bg = np.vstack([bg, cand[np.all(dist > radii + 0.02, axis=1)]])
        bg = bg[:n_bg]
        pts.append(bg)
        cols.append(np.clip(0.5 + rng.uniform(-0.15, 0.15, size=(n_bg, 3)), 0, 1))
        labs.append(np.full(n_bg, BACKGROUND, dtype=np.int64))
        offs.append(np.zeros((n_bg, 8, 3)))

    order = rng.permutation(n_points)
    return SyntheticScene(
        points=np.vstack(pts)[order],
        colors=np.vstack(cols)[order],
        labels=np.concatenate(labs)[order],
        keypoint_offsets=np.concatenate(offs)[order],
        poses={k: poses[k] for k in sorted(poses)},
        seed=seed,
        scene_id=scene_id,
    )


# ---------------------------------------------------------------- scene files

SCENE_MAGIC = b"PVSCENE\x00"
SCENE_VERSION = 1
_ARRAYS = (("points", "<f8"), ("colors", "<f8"), ("labels", "<i8"), ("keypoint_offsets", "<f8"))


def scene_to_bytes(scene: SyntheticScene) -> bytes:
    meta = {
        "scene_id": scene.scene_id,
        "seed": scene.seed,
        "poses": {
            str(k): {"rotation": p.rotation.reshape(-1).tolist(), "translation": p.translation.tolist()}
            for k, p in scene.poses.items()
        },
        "arrays": [
            {"name": name, "dtype": dtype, "shape": list(getattr(scene, name).shape)} for name, dtype in _ARRAYS
        ],
    }
    meta_raw = json.dumps(meta, sort_keys=True, indent=1).encode("utf-8")
    chunks = [SCENE_MAGIC, struct.pack("<II", SCENE_VERSION, len(meta_raw)), meta_raw]
    for name, dtype in _ARRAYS:
        chunks.append(np.ascontiguousarray(getattr(scene, name), dtype=dtype).tobytes())
    return b"".join(chunks)


def scene_from_bytes(buf: bytes) -> SyntheticScene:
    head = len(SCENE_MAGIC) + 8
    if len(buf) < head:
        raise ParseError("truncated scene header", offset=len(buf))
    if buf[: len(SCENE_MAGIC)] != SCENE_MAGIC:
        raise ParseError("not a scene file (bad magic)", offset=0)
    version, meta_len = struct.unpack("<II", buf[len(SCENE_MAGIC):head])
    if version != SCENE_VERSION:
        raise VersionError(f"unsupported scene file version {version}", offset=len(SCENE_MAGIC))
    if head + meta_len > len(buf):
        raise ParseError("truncated metadata block", offset=len(buf))
    try:
        meta = json.loads(buf[head: head + meta_len].decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed metadata: {exc.msg}", offset=head + exc.pos, line=exc.lineno) from exc
    except UnicodeDecodeError as exc:
        raise ParseError("metadata is not utf-8", offset=head + exc.start) from exc
    pos = head + meta_len
    arrays = {}
    try:
        specs = meta["arrays"]
        for spec in specs:
            dtype = np.dtype(spec["dtype"])
            shape = tuple(int(s) for s in spec["shape"])
            nbytes = dtype.itemsize * int(np.prod(shape))
            if pos + nbytes > len(buf):
                raise ParseError(f"truncated array {spec['name']!r}", offset=len(buf))
            arrays[spec["name"]] = np.frombuffer(buf[pos: pos + nbytes], dtype=dtype).reshape(shape).copy()
            pos += nbytes
        poses = {
            int(k): RigidPose(np.array(v["rotation"]).reshape(3, 3), np.array(v["translation"]))
            for k, v in meta["poses"].items()
        }
        if pos != len(buf):
            raise ParseError("trailing bytes after scene arrays", offset=pos)
        return SyntheticScene(
            points=arrays["points"].astype(np.float64),
            colors=arrays["colors"].astype(np.float64),
            labels=arrays["labels"].astype(np.int64),
            keypoint_offsets=arrays["keypoint_offsets"].astype(np.float64),
            poses=poses,
            seed=int(meta["seed"]),
            scene_id=str(meta.get("scene_id", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"malformed scene metadata: {exc!r}", offset=head) from exc


def write_scene(path, scene: SyntheticScene) -> None:
    Path(path).write_bytes(scene_to_bytes(scene))


def read_scene(path) -> SyntheticScene:
    return scene_from_bytes(Path(path).read_bytes())


def write_model(path, model: ObjectModel) -> None:
    Path(path).write_text(json.dumps(model.to_json(), indent=1) + "\n", encoding="utf-8")


def read_model(path) -> ObjectModel:
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed model file: {exc.msg}", offset=exc.pos, line=exc.lineno) from exc
    return ObjectModel.from_json(obj)
