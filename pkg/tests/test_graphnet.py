import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from posevote.diffcore import Tape, Tensor, grad_check, ops
from posevote.diffcore.params import ParamStore
from posevote.errors import ConfigurationError, GraphError, InputError, ShapeError
from posevote.graphnet import (
    AttentionFuse, EdgeConv, KeypointGraphEmbed, LocalGraph, MultiScaleEmbed, attention_fuse,
    build_keypoint_graph, build_local_graph, keypoint_graph_embed, local_graph_embed, model_keypoint_graph,
    multiscale_embed, nearest_upsample_index, subsample_indices,
)


def mish(x):
    return x * np.tanh(np.log1p(np.exp(x)))


# ------------------------------------------------------------------ keypoint graphs

def test_keypoint_graph_star_and_features(rng):
    votes = rng.normal(size=(5, 8, 3))
    g = build_keypoint_graph(votes)
    center = votes.mean(axis=1)
    np.testing.assert_allclose(g.centers.data, center, atol=1e-15)
    np.testing.assert_allclose(g.edge_features.data[..., :3], center[:, None] - votes, atol=1e-15)
    np.testing.assert_allclose(g.edge_features.data[..., 3:], np.broadcast_to(center[:, None], votes.shape))


def test_keypoint_graph_rejects_nan():
    votes = np.zeros((2, 8, 3))
    votes[1, 2, 0] = np.nan
    with pytest.raises(InputError):
        build_keypoint_graph(votes)


def test_keypoint_embed_matches_loop(rng):
    store = ParamStore()
    embed = KeypointGraphEmbed(store, "kg", 5, rng)
    votes = rng.normal(size=(4, 8, 3))
    model_kp = rng.normal(size=(8, 3))
    out = keypoint_graph_embed(build_keypoint_graph(votes), model_keypoint_graph(model_kp, 4), embed).data
    theta, phi, b = embed.theta.data, embed.phi.data, embed.bias.data
    cm = model_kp.mean(0)
    for n in range(4):
        cp = votes[n].mean(0)
        rows = []
        for i in range(8):
            off = np.concatenate([cp - votes[n, i], cm - model_kp[i]])
            ab = np.concatenate([cp, cm])
            rows.append(mish(off @ theta + ab @ phi + b))
        np.testing.assert_allclose(out[n], np.max(rows, axis=0), atol=1e-12)


def test_keypoint_embed_needs_eight_vertices(rng):
    store = ParamStore()
    embed = KeypointGraphEmbed(store, "kg", 4, rng)
    with pytest.raises(ConfigurationError):
        keypoint_graph_embed(build_keypoint_graph(rng.normal(size=(2, 6, 3))), model_keypoint_graph(np.zeros((6, 3)), 2),
                             embed)


def test_keypoint_embed_gradient(rng):
    store = ParamStore()
    embed = KeypointGraphEmbed(store, "kg", 4, rng)
    votes = Tensor(rng.normal(size=(3, 8, 3)), requires_grad=True)
    model = model_keypoint_graph(rng.normal(size=(8, 3)), 3)
    tensors = {k: p.value for k, p in store.trainable()}
    tensors["votes"] = votes
    report = grad_check(lambda: ops.sum(keypoint_graph_embed(build_keypoint_graph(votes), model, embed) ** 2), tensors)
    assert report.passed, report.lines()


# ------------------------------------------------------------------ local graph

def test_local_graph_validation():
    with pytest.raises(GraphError):
        LocalGraph(np.array([[1], [0], [5]])).validate(3)
    with pytest.raises(GraphError):
        LocalGraph(np.array([[0], [0], [1]])).validate(3)  # self-loop on row 0
    with pytest.raises(GraphError):
        LocalGraph(np.array([[1], [0]])).validate(3)


def test_local_embed_matches_edge_loop(rng):
    store = ParamStore()
    conv = EdgeConv(store, "ec", 3, 4, rng)
    conv.bias.data = rng.normal(size=4)
    x = rng.normal(size=(10, 3))
    graph = build_local_graph(x, 3)
    out = local_graph_embed(x, graph, conv).data
    for i in range(10):
        edges = [mish((x[i] - x[j]) @ conv.theta.data + x[i] @ conv.phi.data + conv.bias.data)
                 for j in graph.neighbors[i]]
        np.testing.assert_allclose(out[i], np.max(edges, axis=0), atol=1e-12)


def test_local_embed_invariant_to_point_order(rng):
    store = ParamStore()
    conv = EdgeConv(store, "ec", 3, 6, rng)
    x = rng.normal(size=(30, 3))
    base = local_graph_embed(x, build_local_graph(x, 5), conv).data
    perm = rng.permutation(30)
    xp = x[perm]
    out = local_graph_embed(xp, build_local_graph(xp, 5), conv).data
    np.testing.assert_allclose(out, base[perm], atol=1e-12)


def test_max_mish_equals_max_of_mish(rng):
    for _ in range(20):
        e = rng.normal(scale=3, size=(7, 5, 4))
        np.testing.assert_allclose(ops.max_mish(e, axis=1).data, mish(e).max(axis=1), atol=1e-12)


# ------------------------------------------------------------------ multiscale

def test_subsample_and_upsample(rng):
    idx = subsample_indices(10, 0.5, rng)
    assert len(idx) == 5 and np.all(np.diff(idx) > 0)
    x = rng.normal(size=(10, 2))
    up = nearest_upsample_index(x, idx)
    np.testing.assert_array_equal(up[idx], np.arange(5))  # samples map to themselves
    d = ((x[:, None] - x[idx][None]) ** 2).sum(-1)
    np.testing.assert_array_equal(up, d.argmin(axis=1))


def test_multiscale_shapes_and_small_sample_error(rng):
    store = ParamStore()
    block = MultiScaleEmbed(store, "ms", 4, 6, 3, 0.5, rng)
    out = multiscale_embed(rng.normal(size=(20, 4)), block, np.random.default_rng(0))
    assert out.shape == (20, 6)
    store = ParamStore()
    tiny = MultiScaleEmbed(store, "ms", 4, 6, 8, 0.25, rng)
    with pytest.raises(ConfigurationError):
        multiscale_embed(rng.normal(size=(20, 4)), tiny, np.random.default_rng(0))


def test_multiscale_deterministic_given_rng(rng):
    store = ParamStore()
    block = MultiScaleEmbed(store, "ms", 4, 6, 3, 0.5, rng)
    x = rng.normal(size=(25, 4))
    a = multiscale_embed(x, block, np.random.default_rng(3)).data
    b = multiscale_embed(x, block, np.random.default_rng(3)).data
    assert a.tobytes() == b.tobytes()


# ------------------------------------------------------------------ attention fusion

def test_attention_shapes_and_gates(rng):
    store = ParamStore()
    att = AttentionFuse(store, "af", 8, 4, rng)
    X, Y = rng.normal(size=(16, 8)), rng.normal(size=(16, 4))
    out = attention_fuse(X, Y, att)
    assert out.shape == (16, 8)
    assert att.last_channel_gate.shape == (1, 8) and att.last_spatial_gate.shape == (16, 1)
    for gate in (att.last_channel_gate, att.last_spatial_gate):
        assert np.all((gate > 0) & (gate < 1))


def test_attention_uses_second_stream(rng):
    store = ParamStore()
    att = AttentionFuse(store, "af", 8, 4, rng)
    X = rng.normal(size=(16, 8))
    a = attention_fuse(X, np.zeros((16, 4)), att).data
    b = attention_fuse(X, rng.normal(size=(16, 4)), att).data
    assert not np.allclose(a, b)


def test_attention_shape_errors(rng):
    store = ParamStore()
    att = AttentionFuse(store, "af", 8, 4, rng)
    with pytest.raises(ShapeError):
        attention_fuse(np.zeros((5, 8)), np.zeros((6, 4)), att)
    with pytest.raises(ShapeError):
        attention_fuse(np.zeros((5, 7)), np.zeros((5, 4)), att)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_attention_gradients(seed):
    rng = np.random.default_rng(seed)
    store = ParamStore()
    att = AttentionFuse(store, "af", 4, 3, rng)
    X, Y = Tensor(rng.normal(size=(9, 4)), requires_grad=True), Tensor(rng.normal(size=(9, 3)), requires_grad=True)
    tensors = {k: p.value for k, p in store.trainable()}
    tensors.update(X=X, Y=Y)
    report = grad_check(lambda: ops.sum(attention_fuse(X, Y, att) ** 2), tensors, max_per_param=8)
    assert report.passed, report.lines()
