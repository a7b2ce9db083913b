"""Finite-difference sweep over every differentiable op, graph block and the full pipeline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import ops
from .diffcore.gradcheck import GradCheckReport, grad_check
from .diffcore.layers import ConvBlock
from .diffcore.params import ParamStore
from .diffcore.tensor import Tensor
from .graphnet import (
    AttentionFuse, EdgeConv, KeypointGraphEmbed, MultiScaleEmbed, attention_fuse, build_keypoint_graph,
    build_local_graph, keypoint_graph_embed, local_graph_embed, multiscale_embed,
)
from .pipeline.config import PipelineConfig
from .pipeline.losses import total_loss
from .pipeline.train import build_network, compute_losses
from .synthdata import default_models, generate_scene


@dataclass
class SweepEntry:
    name: str
    report: GradCheckReport

    @property
    def passed(self) -> bool:
        return self.report.passed

    def line(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return f"{self.name:28s} max_rel_err={self.report.worst:.3e} tol={self.report.tol:.0e} {status}"


def _leaf(rng, *shape, low=None, high=None):
    data = rng.normal(size=shape) if low is None else rng.uniform(low, high, size=shape)
    return Tensor(data, requires_grad=True)


def op_cases(rng: np.random.Generator) -> dict:
    a, b = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
    row = _leaf(rng, 1, 4)
    pos = _leaf(rng, 3, 4, low=0.5, high=2.0)
    m1, m2 = _leaf(rng, 3, 5), _leaf(rng, 5, 2)
    bias = _leaf(rng, 2)
    v1, v2 = _leaf(rng, 6, 3), _leaf(rng, 6, 3)
    e = _leaf(rng, 5, 4, 3)
    w = rng.normal(size=(3, 4))
    idx = rng.integers(0, 3, size=(5, 2))
    mask = rng.random((3, 4)) > 0.5
    rows = rng.integers(0, 3, size=4)
    c35 = rng.normal(size=(3, 5))
    return {
        "add": (lambda: ops.sum(ops.add(a, row) ** 2), [a, row]),
        "sub": (lambda: ops.sum(ops.sub(a, b) ** 2), [a, b]),
        "mul": (lambda: ops.sum(ops.mul(a, row)), [a, row]),
        "div": (lambda: ops.sum(ops.div(a, pos)), [a, pos]),
        "power": (lambda: ops.sum(ops.power(pos, 2.5)), [pos]),
        "matmul": (lambda: ops.sum(ops.matmul(m1, m2) ** 2), [m1, m2]),
        "linear": (lambda: ops.sum(ops.linear(m1, m2, bias) ** 2), [m1, m2, bias]),
        "exp": (lambda: ops.sum(ops.exp(a)), [a]),
        "log": (lambda: ops.sum(ops.log(pos)), [pos]),
        "sqrt": (lambda: ops.sum(ops.sqrt(pos)), [pos]),
        "abs": (lambda: ops.sum(ops.abs(a) * w), [a]),
        "tanh": (lambda: ops.sum(ops.tanh(a) * w), [a]),
        "sigmoid": (lambda: ops.sum(ops.sigmoid(a) * w), [a]),
        "softplus": (lambda: ops.sum(ops.softplus(a) * w), [a]),
        "mish": (lambda: ops.sum(ops.mish(a) * w), [a]),
        "max_mish": (lambda: ops.sum(ops.max_mish(e, axis=1) ** 2), [e]),
        "log_softmax": (lambda: ops.sum(ops.log_softmax(a, 1) * w), [a]),
        "sum": (lambda: ops.sum(ops.sum(a, axis=0) ** 2), [a]),
        "mean": (lambda: ops.sum(ops.mean(a, axis=1, keepdims=True) * a), [a]),
        "reduce_max": (lambda: ops.sum(ops.reduce(e, 1, "max") ** 2), [e]),
        "reduce_min": (lambda: ops.sum(ops.reduce(e, 1, "min") ** 2), [e]),
        "reduce_avg": (lambda: ops.sum(ops.reduce(e, 1, "avg") ** 2), [e]),
        "norm": (lambda: ops.sum(ops.norm(v1, axis=1)), [v1]),
        "normalize": (lambda: ops.sum(ops.normalize(v1) * v2.data), [v1]),
        "cross": (lambda: ops.sum(ops.cross(v1, v2) ** 2), [v1, v2]),
        "reshape": (lambda: ops.sum(ops.reshape(a, (2, 6)) ** 3), [a]),
        "transpose": (lambda: ops.sum((ops.transpose(m1) @ c35) ** 2), [m1]),
        "broadcast_to": (lambda: ops.sum(ops.broadcast_to(row, (3, 4)) * w), [row]),
        "index": (lambda: ops.sum(ops.index(a, (rows, slice(1, 3))) ** 2), [a]),
        "gather_rows": (lambda: ops.sum(ops.gather_rows(a, idx) ** 2), [a]),
        "concat": (lambda: ops.sum(ops.concat([a, b], 0) ** 3), [a, b]),
        "stack": (lambda: ops.sum(ops.stack([a, b], 2) ** 2), [a, b]),
        "where": (lambda: ops.sum(ops.where(mask, a, b) ** 2), [a, b]),
    }


def _check(name, f, leaves, tol, **kw) -> SweepEntry:
    tensors = leaves if isinstance(leaves, dict) else {f"x{i}": t for i, t in enumerate(leaves)}
    return SweepEntry(name, grad_check(f, tensors, tol=tol, **kw))


def sweep_ops(seed: int = 0, tol: float = 1e-4) -> list[SweepEntry]:
    rng = np.random.default_rng(seed)
    return [_check(f"op.{name}", f, leaves, tol, max_per_param=None) for name, (f, leaves) in op_cases(rng).items()]


def _store_tensors(store: ParamStore, extra: dict | None = None) -> dict:
    out = {k: p.value for k, p in store.trainable()}
    out.update(extra or {})
    return out


def sweep_graph(seed: int = 0, tol: float = 1e-4) -> list[SweepEntry]:
    rng = np.random.default_rng(seed)
    out = []
    store = ParamStore()
    embed = KeypointGraphEmbed(store, "kg", 6, rng)
    votes = _leaf(rng, 10, 8, 3)
    model = build_keypoint_graph(Tensor(np.repeat(rng.normal(size=(1, 8, 3)), 10, axis=0)))
    out.append(_check("graph.keypoint_embed",
                      lambda: ops.sum(keypoint_graph_embed(build_keypoint_graph(votes), model, embed) ** 2),
                      _store_tensors(store, {"votes": votes}), tol))

    store = ParamStore()
    conv = EdgeConv(store, "ec", 4, 5, rng)
    x = _leaf(rng, 20, 4)
    out.append(_check("graph.local_embed",
                      lambda: ops.sum(local_graph_embed(x, build_local_graph(x, 4), conv) ** 2),
                      _store_tensors(store, {"x": x}), tol))

    store = ParamStore()
    block = MultiScaleEmbed(store, "ms", 4, 5, 3, 0.5, rng)
    x = _leaf(rng, 24, 4)
    out.append(_check("graph.multiscale_embed",
                      lambda: ops.sum(multiscale_embed(x, block, np.random.default_rng(seed)) ** 2),
                      _store_tensors(store, {"x": x}), tol))

    store = ParamStore()
    att = AttentionFuse(store, "af", 8, 4, rng)
    X, Y = _leaf(rng, 16, 8), _leaf(rng, 16, 4)
    out.append(_check("graph.attention_fuse", lambda: ops.sum(attention_fuse(X, Y, att) ** 2),
                      _store_tensors(store, {"X": X, "Y": Y}), tol))

    store = ParamStore()
    blk = ConvBlock(store, "cb", 3, 6, rng)
    x = _leaf(rng, 12, 3)
    out.append(_check("layer.conv_block", lambda: ops.sum(blk(x) ** 2), _store_tensors(store, {"x": x}), tol))
    return out


SMALL_CONFIG = PipelineConfig(
    n_points=64, n_vertices=64, k=4, k_coord=6, sample_ratio=0.5, coord_width=8, color_width=8,
    feature_width=8, kp_embed_width=8, local_widths=(8, 8), agg_width=8, head_widths=(8,), epochs=2,
)


def small_problem(seed: int = 0, config: PipelineConfig = SMALL_CONFIG):
    models = {m.class_id: m for m in default_models(seed, n_vertices=config.n_vertices)}
    scene = generate_scene(list(models.values()), n_points=config.n_points, seed=seed,
                           noise_sigma=config.noise_sigma, background_fraction=config.background_fraction)
    net = build_network(config.with_overrides(seed=seed), models)
    # zero-initialized output layers would hide every gradient upstream of them
    rng = np.random.default_rng([seed, 5])
    for name, p in net.store.trainable():
        if name.endswith(".w") and not p.value.data.any():
            p.value.data[...] = rng.normal(scale=0.1, size=p.value.data.shape)
    return net, scene, models


def pipeline_loss_fn(net, scene, models, epoch: int = 0, seed: int = 0):
    def f():
        terms, _ = compute_losses(net, scene, models, np.random.default_rng(seed))
        return total_loss({k: t.value for k, t in terms.items()}, net.config.loss_weights(), epoch)
    return f


def sweep_pipeline(seed: int = 0, tol: float = 1e-3, max_per_param: int | None = 6) -> list[SweepEntry]:
    """Whole-pipeline total loss against every parameter, past and after the delta switch."""
    net, scene, models = small_problem(seed)
    out = []
    for epoch in (0, net.config.switch_epoch):
        f = pipeline_loss_fn(net, scene, models, epoch, seed)
        out.append(_check(f"pipeline.total_loss@epoch{epoch}", f, _store_tensors(net.store), tol,
                          max_per_param=max_per_param, seed=seed))
    return out


def sweep_stages(seed: int = 0, tol: float = 1e-4) -> list[SweepEntry]:
    """Extractor alone and pose heads alone, at the tighter per-op tolerance."""
    net, scene, _ = small_problem(seed)
    weights = np.random.default_rng(seed).normal(size=(scene.n_points, net.config.feature_width))
    extractor = {k: p.value for k, p in net.store.trainable()
                 if k.split(".")[0] in ("coord", "color", "fuse", "context")}
    out = [_check("pipeline.extractor",
                  lambda: ops.sum(net.features(scene.points, scene.colors) * weights),
                  extractor, tol, max_per_param=6)]
    heads = {k: p.value for k, p in net.store.trainable() if k.startswith(("head.rot", "head.trans"))}
    g_in = Tensor(np.random.default_rng(seed + 1).normal(size=(scene.n_points, 3 * net.config.agg_width)))

    def heads_fn():
        r6 = net.rot_head(g_in)
        from .pipeline.model import recover_rotations
        R, _ = recover_rotations(r6)
        return ops.sum(R * np.arange(9.0).reshape(3, 3)) + ops.sum(net.trans_head(g_in) ** 2)

    out.append(_check("pipeline.pose_heads", heads_fn, heads, tol, max_per_param=6))
    return out


def full_sweep(seed: int = 0) -> list[SweepEntry]:
    return sweep_ops(seed) + sweep_graph(seed) + sweep_stages(seed) + sweep_pipeline(seed)
