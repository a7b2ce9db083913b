import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from posevote import geometry
from posevote.diffcore import Tape, Tensor, no_grad
from posevote.errors import ConfigurationError, MissingClassError, ParseError, ShapeError
from posevote.gradsweep import SMALL_CONFIG, small_problem
from posevote.pipeline.config import PipelineConfig, load_config, parse_config, save_config
from posevote.pipeline.model import recover_rotations
from posevote.pipeline.selection import mean_nearest, select_all, select_pose
from posevote.pipeline.train import compute_losses, scene_loss


def rz(deg):
    return geometry.axis_angle_to_rotation(np.array([0.0, 0.0, np.radians(deg)]))


# ------------------------------------------------------------------ config

def test_config_text_roundtrip(tmp_path):
    cfg = PipelineConfig(local_widths=(8, 16), max_lr=1e-3, seed=7)
    assert parse_config(cfg.to_text()) == cfg
    save_config(tmp_path / "c.txt", cfg)
    assert load_config(tmp_path / "c.txt") == cfg


def test_config_switch_epoch_defaults_to_half():
    assert PipelineConfig(epochs=40).switch_epoch == 20
    assert PipelineConfig(epochs=40, delta_switch_epoch=5).switch_epoch == 5


@pytest.mark.parametrize("text", ["epochs 3", "bogus = 1", "epochs = 2.5", "max_lr = [", "local_widths = a"])
def test_config_parse_errors(text):
    with pytest.raises(ParseError):
        parse_config(text)


def test_config_parse_error_reports_line():
    with pytest.raises(ParseError) as info:
        parse_config("# header\nepochs = 3\nnope = 1\n")
    assert "3" in str(info.value)


@pytest.mark.parametrize("kw", [dict(k=0), dict(sample_ratio=0.0), dict(local_widths=()), dict(k=2000)])
def test_config_rejects_invalid(kw):
    with pytest.raises(ConfigurationError):
        PipelineConfig(**kw)


# ------------------------------------------------------------------ rotation recovery in the network

def test_recover_rotations_matches_geometry(rng):
    r6 = rng.normal(size=(50, 6))
    R, valid = recover_rotations(r6)
    ref, ref_valid = geometry.recover_rotation_6d_batch(r6)
    assert valid.all() and ref_valid.all()
    np.testing.assert_allclose(R.data, ref, atol=1e-12)


def test_recover_rotations_flags_degenerate_rows(rng):
    r6 = rng.normal(size=(4, 6))
    r6[1, 3:] = 2 * r6[1, :3]
    r6[2, :3] = 0
    R, valid = recover_rotations(Tensor(r6, requires_grad=True))
    assert valid.tolist() == [True, False, False, True]
    assert np.all(np.isfinite(R.data))


# ------------------------------------------------------------------ network

@pytest.fixture(scope="module")
def problem():
    return small_problem(0)


def test_network_output_shapes(problem):
    net, scene, _ = problem
    n = SMALL_CONFIG.n_points
    with no_grad():
        out = net(scene.points, scene.colors, scene.labels)
    assert out.offsets.shape == (n, 8, 3)
    assert out.logits.shape == (n, SMALL_CONFIG.n_classes)
    assert out.r6.shape == (n, 6) and out.rotations.shape == (n, 3, 3) and out.translations.shape == (n, 3)
    R = out.rotations.data
    err = np.abs(np.einsum("nji,njk->nik", R, R) - np.eye(3)).max()
    assert err < 1e-6 and np.allclose(np.linalg.det(R), 1, atol=1e-6)


def test_network_uses_color(problem):
    net, scene, _ = problem
    with no_grad():
        a = net(scene.points, scene.colors, scene.labels).offsets.data
        b = net(scene.points, scene.colors[::-1].copy(), scene.labels).offsets.data
    assert not np.allclose(a, b)


def test_network_inference_labels_from_segmentation(problem):
    net, scene, _ = problem
    with no_grad():
        out = net(scene.points, scene.colors)
        labels = np.argmax(out.logits.data, axis=1)
        again = net(scene.points, scene.colors, labels)
    np.testing.assert_array_equal(out.translations.data, again.translations.data)


def test_network_rejects_bad_inputs(problem):
    net, scene, _ = problem
    with pytest.raises(ShapeError):
        net(scene.points, scene.colors[:-1])
    with pytest.raises(ShapeError):
        net(scene.points, scene.colors, np.full(len(scene.points), 99))


def test_both_pose_heads_receive_gradient(problem):
    net, scene, models = problem
    net.store.zero_grad()
    with Tape() as tape:
        total, _ = scene_loss(net, scene, models, net.config.switch_epoch, np.random.default_rng(0))
        tape.backward(total)
    grads = {name: p.grad for name, p in net.store.trainable()}
    for prefix in ("head.rot", "head.trans", "head.kp", "head.seg", "kpgraph", "local.0", "fuse", "color.in"):
        assert any(np.abs(g).sum() > 0 for k, g in grads.items() if k.startswith(prefix)), prefix
    net.store.zero_grad()


def test_loss_terms_finite(problem):
    net, scene, models = problem
    with no_grad():
        terms, _ = compute_losses(net, scene, models, np.random.default_rng(0))
    assert set(terms) == {"seg", "kp", "geom", "R", "t"}
    assert all(np.isfinite(float(t.value.data)) for t in terms.values())


# ------------------------------------------------------------------ selection

def test_selection_rz_example():
    R = np.stack([rz(0), rz(10), rz(80)])
    t = np.zeros((3, 3))
    pose = select_pose(R, t, np.ones(3, int), 1)
    np.testing.assert_allclose(pose.rotation, rz(10), atol=1e-12)


def test_selection_missing_class():
    with pytest.raises(MissingClassError):
        select_pose(np.stack([np.eye(3)]), np.zeros((1, 3)), np.array([0]), 1)
    out = select_all(np.stack([np.eye(3)]), np.zeros((1, 3)), np.array([1]), [1, 2])
    assert out[2] is None and out[1] is not None


def test_selection_skips_invalid_candidates():
    R = np.stack([rz(0), rz(10), rz(80)])
    t = np.array([[0, 0, 0], [1, 0, 0], [9, 0, 0]], float)
    pose = select_pose(R, t, np.ones(3, int), 1, valid=np.array([True, True, False]))
    assert pose.translation.tolist() in ([0, 0, 0], [1, 0, 0])
    assert not np.allclose(pose.rotation, rz(80))


def test_mean_nearest_tie_breaks_on_order():
    x = np.array([[1.0], [-1.0]])
    assert mean_nearest(x, np.array([5, 3])) == 1
    assert mean_nearest(x, np.array([2, 3])) == 0


def _random_candidates(rng, n):
    base = geometry.axis_angle_to_rotation(rng.normal(size=3))
    R = np.stack([base @ geometry.axis_angle_to_rotation(rng.normal(scale=0.2, size=3)) for _ in range(n)])
    t = rng.normal(size=(n, 3))
    labels = rng.integers(0, 3, size=n)
    labels[0] = 1
    return R, t, labels


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 40))
def test_selection_permutation_invariant_and_member(seed, n):
    rng = np.random.default_rng(seed)
    R, t, labels = _random_candidates(rng, n)
    pose = select_pose(R, t, labels, 1)
    mask = labels == 1
    assert any(np.array_equal(pose.rotation, r) for r in R[mask])
    assert any(np.array_equal(pose.translation, v) for v in t[mask])
    perm = rng.permutation(n)
    moved = select_pose(R[perm], t[perm], labels[perm], 1, point_ids=np.arange(n)[perm])
    assert np.array_equal(moved.rotation, pose.rotation)
    assert np.array_equal(moved.translation, pose.translation)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_selection_with_duplicates_is_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    R, t, labels = _random_candidates(rng, 6)
    R, t, labels = np.concatenate([R, R]), np.concatenate([t, t]), np.concatenate([labels, labels])
    pose = select_pose(R, t, labels, 1)
    perm = rng.permutation(12)
    moved = select_pose(R[perm], t[perm], labels[perm], 1, point_ids=perm)
    assert np.array_equal(moved.rotation, pose.rotation)
    assert np.array_equal(moved.translation, pose.translation)
