"""Graph construction and the edge-convolution embeddings.

* keypoint graphs: the 8 voted keypoints of one point joined to their
  centroid, with 6-channel edge features ``(center - vertex) ⊕ center``;
* keypoint-graph embedding, local (k-NN) graph embedding and the two-scale
  embedding built from it;
* an attention block fusing two per-point feature streams.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from . import geometry
from .diffcore import ops
from .diffcore.layers import ConvBlock, Dense
from .diffcore.params import ParamStore, glorot
from .diffcore.tensor import Tensor, as_tensor, decide
from .errors import ConfigurationError, GraphError, InputError, ShapeError

N_KEYPOINTS = 8


@dataclass
class KeypointGraph:
    votes: Tensor          # (n, 8, 3)
    centers: Tensor        # (n, 3)
    edge_features: Tensor  # (n, 8, 6)


def build_keypoint_graph(votes) -> KeypointGraph:
    votes = as_tensor(votes)
    if votes.ndim != 3 or votes.shape[2] != 3:
        raise ShapeError(f"votes must be (n, K, 3), got {votes.shape}")
    if not np.all(np.isfinite(votes.data)):
        raise InputError("non-finite keypoint votes")
    centers = ops.mean(votes, axis=1)
    c = ops.reshape(centers, (centers.shape[0], 1, 3))
    c_b = ops.broadcast_to(c, votes.shape)
    edges = ops.concat([c_b - votes, c_b], axis=2)
    return KeypointGraph(votes, centers, edges)


def model_keypoint_graph(keypoints: np.ndarray, n: int) -> KeypointGraph:
    """Constant graph of one model's keypoints, repeated for ``n`` points."""
    kp = np.broadcast_to(np.asarray(keypoints, dtype=np.float64), (n,) + np.shape(keypoints))
    return build_keypoint_graph(Tensor(np.array(kp)))


class KeypointGraphEmbed:
    """Per-edge ``theta·offset + phi·absolute + b``, Mish, then max over edges.

    The 12 input channels are the prediction's edge features followed by the
    model's; ``theta`` acts on the two offset halves and ``phi`` on the two
    center halves.
    """

    def __init__(self, store: ParamStore, name: str, d_out: int, rng: np.random.Generator):
        self.theta = store.add(f"{name}.theta", glorot(rng, 6, d_out))
        self.phi = store.add(f"{name}.phi", glorot(rng, 6, d_out))
        self.bias = store.add(f"{name}.b", np.zeros(d_out))
        self.d_out = d_out


def keypoint_graph_embed(pred: KeypointGraph, model: KeypointGraph, embed: KeypointGraphEmbed) -> Tensor:
    kp, km = pred.edge_features.shape[1], model.edge_features.shape[1]
    if kp != N_KEYPOINTS or km != N_KEYPOINTS:
        raise ConfigurationError(f"keypoint graphs need {N_KEYPOINTS} vertices, got {kp} and {km}")
    if pred.edge_features.shape[0] != model.edge_features.shape[0]:
        raise ShapeError("prediction and model graphs cover different point counts")
    e = ops.concat([pred.edge_features, model.edge_features], axis=2)  # (n, 8, 12)
    offsets = ops.concat([e[:, :, 0:3], e[:, :, 6:9]], axis=2)
    absolute = ops.concat([e[:, :, 3:6], e[:, :, 9:12]], axis=2)
    h = ops.linear(offsets, embed.theta) + ops.linear(absolute, embed.phi, embed.bias)
    return ops.max_mish(h, axis=1)


@dataclass
class LocalGraph:
    neighbors: np.ndarray  # (n, k) int

    def validate(self, n: int) -> None:
        nb = self.neighbors
        if nb.ndim != 2:
            raise GraphError(f"neighbor table must be 2-D, got shape {nb.shape}")
        if nb.size and (nb.min() < 0 or nb.max() >= n):
            raise GraphError(f"neighbor index out of range for {n} points")
        if nb.shape[0] != n:
            raise GraphError(f"neighbor table has {nb.shape[0]} rows for {n} points")
        if np.any(nb == np.arange(n)[:, None]):
            raise GraphError("local graph contains a self-loop")


def build_local_graph(x, k: int) -> LocalGraph:
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    return LocalGraph(decide(lambda: geometry.knn(data, k)))


class EdgeConv:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int, rng: np.random.Generator):
        self.theta = store.add(f"{name}.theta", glorot(rng, d_in, d_out))
        self.phi = store.add(f"{name}.phi", glorot(rng, d_in, d_out))
        self.bias = store.add(f"{name}.b", np.zeros(d_out))
        self.d_in, self.d_out = d_in, d_out


def local_graph_embed(x, graph: LocalGraph, conv: EdgeConv) -> Tensor:
    """``max_j Mish(theta·(x_i - x_j) + phi·x_i + b)`` over the graph neighbors."""
    x = as_tensor(x)
    graph.validate(x.shape[0])
    # theta·(x_i - x_j) + phi·x_i == (theta + phi)·x_i - theta·x_j: project before gathering
    center = ops.linear(x, conv.theta + conv.phi, conv.bias)
    neigh = ops.linear(x, conv.theta)
    n, k = graph.neighbors.shape
    edges = ops.reshape(center, (n, 1, conv.d_out)) - ops.gather_rows(neigh, graph.neighbors)
    return ops.max_mish(edges, axis=1)


class MultiScaleEmbed:
    """Edge convolution on the full graph and on a random subsample, fused.

    Both branches share one :class:`EdgeConv`. The subsample branch is
    upsampled by copying the feature of the nearest sampled point in the
    input feature space.
    """

    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int, k: int,
                 sample_ratio: float, rng: np.random.Generator):
        self.conv = EdgeConv(store, f"{name}.edge", d_in, d_out, rng)
        self.fuse = ConvBlock(store, f"{name}.fuse", 2 * d_out, d_out, rng)
        self.k = k
        self.sample_ratio = sample_ratio
        self.d_out = d_out

    def norms(self):
        return self.fuse.modules()


def subsample_indices(n: int, ratio: float, rng: np.random.Generator) -> np.ndarray:
    m = int(math.ceil(ratio * n - 1e-12))
    return np.sort(rng.permutation(n)[:m])


def nearest_upsample_index(x: np.ndarray, sample: np.ndarray) -> np.ndarray:
    d = geometry.pairwise_sq_dists(x, x[sample])
    return np.argmin(d, axis=1)


def multiscale_embed(x, block: MultiScaleEmbed, rng: np.random.Generator) -> Tensor:
    x = as_tensor(x)
    n = x.shape[0]
    m = int(math.ceil(block.sample_ratio * n - 1e-12))
    if m < block.k + 1:
        raise ConfigurationError(
            f"subsample of {m} points is too small for k={block.k} (ratio {block.sample_ratio}, n={n})"
        )
    full = local_graph_embed(x, build_local_graph(x, block.k), block.conv)
    sample = decide(lambda: subsample_indices(n, block.sample_ratio, rng))
    xs = ops.gather_rows(x, sample)
    sparse = local_graph_embed(xs, build_local_graph(xs, block.k), block.conv)
    up_idx = decide(lambda: nearest_upsample_index(x.data, sample))
    up = ops.gather_rows(sparse, up_idx)
    return block.fuse(ops.concat([full, up], axis=1))


class AttentionFuse:
    """Residual channel-then-spatial attention over two feature streams."""

    def __init__(self, store: ParamStore, name: str, c_x: int, c_y: int, rng: np.random.Generator,
                 reduction: int = 4):
        hidden = max(1, c_x // reduction)
        self.conv = ConvBlock(store, f"{name}.conv", c_x + c_y, c_x, rng)
        self.fc1 = Dense(store, f"{name}.ca1", c_x, hidden, rng)
        self.fc2 = Dense(store, f"{name}.ca2", hidden, c_x, rng)
        self.spatial = Dense(store, f"{name}.sa", 2, 1, rng)
        self.c_x, self.c_y = c_x, c_y
        self.last_channel_gate: np.ndarray | None = None
        self.last_spatial_gate: np.ndarray | None = None

    def norms(self):
        return self.conv.modules()

    def channel_mlp(self, v) -> Tensor:
        return self.fc2(ops.mish(self.fc1(v)))

    def attend(self, h) -> Tensor:
        avg = ops.reduce(h, axis=0, mode="avg", keepdims=True)
        mx = ops.reduce(h, axis=0, mode="max", keepdims=True)
        gate_c = ops.sigmoid(self.channel_mlp(avg) + self.channel_mlp(mx))
        h = h * gate_c
        pooled = ops.concat(
            [ops.reduce(h, axis=1, mode="avg", keepdims=True), ops.reduce(h, axis=1, mode="max", keepdims=True)],
            axis=1,
        )
        gate_s = ops.sigmoid(self.spatial(pooled))
        self.last_channel_gate = gate_c.data
        self.last_spatial_gate = gate_s.data
        return h * gate_s


def attention_fuse(X, Y, block: AttentionFuse) -> Tensor:
    """``Mish(X + SA(CA(Conv(X ⊕ Y))))``."""
    X, Y = as_tensor(X), as_tensor(Y)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ShapeError(f"feature streams must share the point axis: {X.shape} vs {Y.shape}")
    if X.shape[1] != block.c_x or Y.shape[1] != block.c_y:
        raise ShapeError(
            f"attention block expects ({block.c_x}, {block.c_y}) channels, got ({X.shape[1]}, {Y.shape[1]})"
        )
    h = block.conv(ops.concat([X, Y], axis=1))
    return ops.mish(X + block.attend(h))
