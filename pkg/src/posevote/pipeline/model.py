"""The point-wise voting network: features, keypoint votes, graph embeddings, pose heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import geometry
from ..diffcore import ops
from ..diffcore.layers import ConvBlock, MLP, Norm, set_training
from ..diffcore.params import ParamStore
from ..diffcore.tensor import Tensor, as_tensor, decide
from ..errors import ConfigurationError, ShapeError
from ..graphnet import (
    N_KEYPOINTS, AttentionFuse, EdgeConv, KeypointGraphEmbed, LocalGraph, MultiScaleEmbed,
    attention_fuse, build_keypoint_graph, build_local_graph, keypoint_graph_embed, local_graph_embed,
    multiscale_embed,
)
from .config import PipelineConfig


@dataclass
class NetOutput:
    offsets: Tensor     # (n, 8, 3) keypoint offsets from each point
    logits: Tensor      # (n, C) class scores
    r6: Tensor          # (n, 6) raw rotation features
    rotations: Tensor   # (n, 3, 3)
    valid: np.ndarray   # (n,) False where the 6D recovery was degenerate
    translations: Tensor  # (n, 3)


def recover_rotations(r6) -> tuple[Tensor, np.ndarray]:
    """Differentiable batched 6D to rotation recovery.

    Degenerate rows are swapped for a fixed well-conditioned input before
    normalization so that no NaN enters the tape; they are flagged invalid.
    """
    r6 = as_tensor(r6)
    _, valid = geometry.recover_rotation_6d_batch(r6.data)
    safe = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    r6 = ops.where(valid[:, None], r6, safe)
    c1 = ops.normalize(r6[:, 0:3])
    c3 = ops.normalize(ops.cross(c1, r6[:, 3:6]))
    c2 = ops.cross(c3, c1)
    return ops.stack([c1, c2, c3], axis=2), valid


class PoseVoteNet:
    """All parameters live in one :class:`ParamStore`."""

    def __init__(self, config: PipelineConfig, model_keypoints: np.ndarray, rng: np.random.Generator):
        model_keypoints = np.asarray(model_keypoints, dtype=np.float64)
        if model_keypoints.shape != (config.n_classes, N_KEYPOINTS, 3):
            raise ConfigurationError(
                f"expected keypoints of shape {(config.n_classes, N_KEYPOINTS, 3)}, got {model_keypoints.shape}"
            )
        c = config
        self.config = c
        self.model_keypoints = model_keypoints  # row 0 (background) is all zeros
        self.store = store = ParamStore()
        self.coord_in = ConvBlock(store, "coord.in", 3, c.coord_width, rng)
        self.coord_edge = EdgeConv(store, "coord.edge", c.coord_width + 3, c.feature_width, rng)
        self.color_in = ConvBlock(store, "color.in", 3, c.color_width, rng)
        self.fuse = AttentionFuse(store, "fuse", c.feature_width, c.color_width, rng)
        self.context = EdgeConv(store, "context", c.feature_width, c.feature_width, rng)
        heads = [c.feature_width, *c.head_widths]
        self.kp_head = MLP(store, "head.kp", heads, 3 * N_KEYPOINTS, rng)
        self.seg_head = MLP(store, "head.seg", heads, c.n_classes, rng)
        self.kp_embed = KeypointGraphEmbed(store, "kpgraph", c.kp_embed_width, rng)
        widths = [c.kp_embed_width, *c.local_widths]
        self.scales = [
            MultiScaleEmbed(store, f"local.{i}", widths[i], widths[i + 1], c.k, c.sample_ratio, rng)
            for i in range(len(c.local_widths))
        ]
        self.aggregate = ConvBlock(store, "aggregate", sum(c.local_widths), c.agg_width, rng)
        # the pooled context is constant over a scene's points; point-axis
        # normalization would cancel it, so the pose heads go without
        pose_in = [3 * c.agg_width, *c.head_widths]
        self.rot_head = MLP(store, "head.rot", pose_in, 6, rng, norm=False)
        # translation is a residual on the vote center and starts at zero
        self.trans_head = MLP(store, "head.trans", pose_in, 3, rng, norm=False, zero_out=True)

    # -- bookkeeping
    def norms(self) -> list[Norm]:
        mods = self.coord_in.modules() + self.color_in.modules() + self.fuse.norms() + self.aggregate.modules()
        for mlp in (self.kp_head, self.seg_head, self.rot_head, self.trans_head):
            for b in mlp.blocks:
                mods += b.modules()
        for s in self.scales:
            mods += s.norms()
        return mods

    def train(self, training: bool = True) -> None:
        set_training(self.norms(), training)

    def coord_graph(self, points: np.ndarray) -> LocalGraph:
        return LocalGraph(geometry.knn(points, self.config.k_coord))

    # -- stages
    def features(self, points: np.ndarray, colors: np.ndarray, coord_graph: LocalGraph | None = None) -> Tensor:
        if coord_graph is None:
            coord_graph = LocalGraph(decide(lambda: geometry.knn(points, self.config.k_coord)))
        x = self.coord_in(points)
        x = local_graph_embed(ops.concat([x, Tensor(points)], axis=1), coord_graph, self.coord_edge)
        y = self.color_in(colors)
        f = attention_fuse(x, y, self.fuse)
        return local_graph_embed(f, coord_graph, self.context)

    def pose_features(self, points: np.ndarray, offsets: Tensor, labels: np.ndarray,
                      rng: np.random.Generator) -> tuple[Tensor, Tensor]:
        n = len(points)
        votes = ops.reshape(offsets, (n, N_KEYPOINTS, 3)) + points[:, None, :]
        pred = build_keypoint_graph(votes)
        model = build_keypoint_graph(Tensor(self.model_keypoints[np.asarray(labels)]))
        h = keypoint_graph_embed(pred, model, self.kp_embed)
        outs = []
        for scale in self.scales:
            h = multiscale_embed(h, scale, rng)
            outs.append(h)
        a = self.aggregate(ops.concat(outs, axis=1))
        g_avg = ops.broadcast_to(ops.reduce(a, axis=0, mode="avg", keepdims=True), a.shape)
        g_max = ops.broadcast_to(ops.reduce(a, axis=0, mode="max", keepdims=True), a.shape)
        return ops.concat([a, g_avg, g_max], axis=1), pred.centers

    def __call__(self, points, colors, labels=None, rng: np.random.Generator | None = None,
                 coord_graph: LocalGraph | None = None) -> NetOutput:
        """Forward pass.

        ``labels`` picks each point's model keypoint graph; when omitted the
        network's own segmentation (argmax) is used, as at inference.
        """
        points = np.asarray(points, dtype=np.float64)
        colors = np.asarray(colors, dtype=np.float64)
        n = len(points)
        if points.shape != (n, 3) or colors.shape != (n, 3):
            raise ShapeError(f"points and colors must both be (n, 3), got {points.shape} and {colors.shape}")
        if rng is None:
            rng = np.random.default_rng(0)
        f = self.features(points, colors, coord_graph)
        offsets = ops.reshape(self.kp_head(f), (n, N_KEYPOINTS, 3))
        logits = self.seg_head(f)
        if labels is None:
            labels = decide(lambda: np.argmax(logits.data, axis=1))
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (n,) or labels.min() < 0 or labels.max() >= self.config.n_classes:
            raise ShapeError("labels must be (n,) class ids within range")
        g, centers = self.pose_features(points, offsets, labels, rng)
        r6 = self.rot_head(g)
        rotations, valid = recover_rotations(r6)
        translations = centers + self.trans_head(g)
        return NetOutput(offsets, logits, r6, rotations, valid, translations)
