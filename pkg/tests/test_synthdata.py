import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from posevote.errors import ConfigurationError, ParseError, VersionError
from posevote.geometry import RigidPose, apply_pose, umeyama_fit
from posevote.metrics import adds_metric
from posevote.synthdata import (
    ObjectModel, default_models, generate_scene, make_object_model, read_model, read_scene, scene_from_bytes,
    scene_to_bytes, symmetry_permutation, write_model, write_scene,
)
from posevote.geometry import rotation_about_axis


@pytest.fixture(scope="module")
def models():
    return default_models(0)


def test_unit_box_half_turn_permutes_corners():
    m = make_object_model("box", 1, symmetric=True, dims=(1.0, 1.0, 1.0), n_vertices=64)
    half_turn = rotation_about_axis([0, 0, 1], np.pi)
    assert any(np.allclose(g, half_turn, atol=1e-15) for g in m.symmetries)
    corners = m.vertices[:8]
    moved = corners @ half_turn.T
    d = np.linalg.norm(moved[:, None] - corners[None], axis=2)
    assert np.all(d.min(axis=1) < 1e-12)
    assert len(set(d.argmin(axis=1))) == 8


def test_unit_box_diameter():
    m = make_object_model("box", 1, dims=(1.0, 1.0, 1.0), n_vertices=64)
    assert m.diameter == pytest.approx(np.sqrt(3), abs=1e-12)


@pytest.mark.parametrize("shape", ["box", "cylinder-approx", "random-blob"])
def test_model_deterministic(shape):
    a = make_object_model(shape, 1, symmetric=True, seed=7, n_vertices=200)
    b = make_object_model(shape, 1, symmetric=True, seed=7, n_vertices=200)
    assert a.vertices.tobytes() == b.vertices.tobytes()
    assert a.keypoints.tobytes() == b.keypoints.tobytes()


@pytest.mark.parametrize("shape", ["box", "cylinder-approx", "random-blob"])
def test_declared_symmetries_permute_vertices(shape):
    m = make_object_model(shape, 2, symmetric=True, seed=3, n_vertices=256)
    assert len(m.symmetries) > 1
    for g in m.symmetries:
        assert symmetry_permutation(m, g, tol=1e-9) is not None


def test_model_invariants(models):
    for m in models:
        assert m.diameter > 0
        assert m.keypoints.shape == (8, 3)
        lo, hi = m.vertices.min(0), m.vertices.max(0)
        assert np.all(m.keypoints >= lo) and np.all(m.keypoints <= hi)
        d = max(np.sqrt(np.sum((a - b) ** 2)) for a in m.vertices[::7] for b in m.vertices)
        assert m.diameter >= d
        diff = m.vertices[:, None] - m.vertices[None]
        assert abs(m.diameter - np.sqrt((diff ** 2).sum(-1)).max()) < 1e-15
    assert [m.symmetric for m in models].count(True) == 1


def test_model_errors():
    with pytest.raises(ConfigurationError):
        make_object_model("box", 1, n_vertices=4)
    with pytest.raises(ConfigurationError):
        make_object_model("cylinder-approx", 1, symmetric=True, n_vertices=20, sides=64)
    with pytest.raises(ConfigurationError):
        make_object_model("torus", 1)


def test_model_json_roundtrip(tmp_path, models):
    for m in models:
        write_model(tmp_path / "m.json", m)
        r = read_model(tmp_path / "m.json")
        assert r.vertices.tobytes() == m.vertices.tobytes()
        assert r.keypoints.tobytes() == m.keypoints.tobytes()
        assert r.diameter == m.diameter and r.symmetric == m.symmetric
        assert all(np.array_equal(a, b) for a, b in zip(r.symmetries, m.symmetries))


def test_noise_free_points_on_posed_model(models):
    s = generate_scene(models, noise_sigma=0, background_fraction=0, seed=5)
    for m in models:
        posed = apply_pose(s.poses[m.class_id], m.vertices)
        pts = s.points[s.labels == m.class_id]
        d = np.linalg.norm(pts[:, None] - posed[None], axis=2).min(axis=1)
        assert np.all(d == 0)


def test_keypoint_offsets_reconstruct_posed_keypoints(models):
    s = generate_scene(models, seed=6)
    for m in models:
        kp = apply_pose(s.poses[m.class_id], m.keypoints)
        mask = s.labels == m.class_id
        recon = s.points[mask][:, None, :] + s.keypoint_offsets[mask]
        # one rounding of the stored subtraction at most
        assert np.all(np.abs(recon - kp) <= 2 * np.spacing(np.abs(kp) + 1.0))
    assert np.all(s.keypoint_offsets[s.labels == 0] == 0)


def test_umeyama_recovers_scene_poses(models):
    for seed in range(10):
        s = generate_scene(models, seed=seed, noise_sigma=0)
        for m in models:
            pose = s.poses[m.class_id]
            fit = umeyama_fit(m.keypoints, apply_pose(pose, m.keypoints))
            assert np.abs(fit.rotation - pose.rotation).max() < 1e-9
            assert np.abs(fit.translation - pose.translation).max() < 1e-9


def test_scene_is_pure_function_of_seed(models):
    a = scene_to_bytes(generate_scene(models, seed=11))
    b = scene_to_bytes(generate_scene(models, seed=11))
    c = scene_to_bytes(generate_scene(models, seed=12))
    assert a == b and a != c


def test_scene_contents(models):
    s = generate_scene(models, n_points=1024, seed=2, background_fraction=0.2)
    assert s.points.shape == (1024, 3) and s.colors.shape == (1024, 3)
    assert (s.labels == 0).sum() == round(0.2 * 1024)
    assert set(np.unique(s.labels)) == {0, 1, 2, 3}
    assert np.all((s.colors >= 0) & (s.colors <= 1))
    assert np.all(np.abs(s.points) <= 0.5 + 0.02)
    for c, p in s.poses.items():
        assert np.allclose(p.rotation.T @ p.rotation, np.eye(3), atol=1e-12)


def test_noise_bound(models):
    sigma = 0.002
    s = generate_scene(models, seed=9, noise_sigma=sigma)
    for m in models:
        posed = apply_pose(s.poses[m.class_id], m.vertices)
        pts = s.points[s.labels == m.class_id]
        d = np.linalg.norm(pts[:, None] - posed[None], axis=2).min(axis=1)
        assert d.max() < 6 * sigma * np.sqrt(3)


def test_occlusion_removes_a_sector(models):
    full = generate_scene(models, seed=4, occlusion_fraction=0.0, noise_sigma=0)
    occ = generate_scene(models, seed=4, occlusion_fraction=0.4, noise_sigma=0)
    for m in models:
        t = occ.poses[m.class_id].translation
        rel = occ.points[occ.labels == m.class_id] - t
        ang = np.sort(np.arctan2(rel[:, 1], rel[:, 0]))
        gaps = np.diff(np.concatenate([ang, ang[:1] + 2 * np.pi]))
        assert gaps.max() > 0.3 * 2 * np.pi
    assert full.n_points == occ.n_points


def test_given_poses_are_used(models):
    poses = {m.class_id: RigidPose(np.eye(3), np.array([0.3 * (i - 1), 0.0, 0.0])) for i, m in enumerate(models)}
    s = generate_scene(models, poses=poses, seed=1)
    for c in poses:
        assert np.array_equal(s.poses[c].translation, poses[c].translation)


def test_too_few_points(models):
    with pytest.raises(ConfigurationError):
        generate_scene(models, n_points=20)


def test_scene_file_roundtrip(tmp_path, models):
    s = generate_scene(models, seed=3, scene_id="x")
    write_scene(tmp_path / "s.pvs", s)
    r = read_scene(tmp_path / "s.pvs")
    for name in ("points", "colors", "labels", "keypoint_offsets"):
        assert getattr(r, name).tobytes() == getattr(s, name).tobytes()
    for c in s.poses:
        assert r.poses[c].rotation.tobytes() == s.poses[c].rotation.tobytes()
        assert r.poses[c].translation.tobytes() == s.poses[c].translation.tobytes()
    assert r.seed == s.seed and r.scene_id == "x"


def test_scene_file_errors(models):
    raw = scene_to_bytes(generate_scene(models, seed=3, n_points=64))
    for cut in (4, 20, len(raw) // 2, len(raw) - 1):
        with pytest.raises(ParseError) as info:
            scene_from_bytes(raw[:cut])
        assert info.value.offset is not None
    with pytest.raises(VersionError):
        scene_from_bytes(raw[:8] + (7).to_bytes(4, "little") + raw[12:])
    with pytest.raises(ParseError):
        scene_from_bytes(b"NOTSCENE" + raw[8:])
    bad_json = bytearray(raw)
    bad_json[17] = ord("{")
    with pytest.raises(ParseError):
        scene_from_bytes(bytes(bad_json))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_symmetric_pose_composition_has_zero_adds(seed):
    m = make_object_model("cylinder-approx", 2, symmetric=True, n_vertices=128, seed=1, sides=8)
    rng = np.random.default_rng(seed)
    from posevote.synthdata import random_rotation
    gt = RigidPose(random_rotation(rng), rng.uniform(-0.3, 0.3, 3))
    for g in m.symmetries:
        assert adds_metric(RigidPose(gt.rotation @ g, gt.translation), gt, m) < 1e-9
