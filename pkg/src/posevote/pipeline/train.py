"""Training loop: per-scene AdamW steps under a one-cycle schedule."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from ..diffcore import Tape, adamw_step, one_cycle_lr
from ..diffcore import checkpoint as ckpt
from ..diffcore.tensor import Tensor
from ..errors import EmptyInputError, NonFiniteLossError
from ..graphnet import N_KEYPOINTS, LocalGraph
from ..synthdata import ObjectModel, SyntheticScene
from .config import PipelineConfig, parse_config
from .losses import COMPONENTS, LossTerm, loss_geom, loss_kp, loss_R, loss_seg, loss_t, total_loss
from .model import NetOutput, PoseVoteNet

LOG_COLUMNS = ("epoch", "lr", "delta", *COMPONENTS, "total")


def keypoint_table(models: Mapping[int, ObjectModel], n_classes: int) -> np.ndarray:
    """``(n_classes, 8, 3)`` model keypoints indexed by class id; row 0 (background) is zero."""
    table = np.zeros((n_classes, N_KEYPOINTS, 3))
    for c, m in models.items():
        if not 0 < c < n_classes:
            raise ValueError(f"class id {c} outside 1..{n_classes - 1}")
        table[c] = m.keypoints
    return table


def build_network(config: PipelineConfig, models: Mapping[int, ObjectModel]) -> PoseVoteNet:
    rng = np.random.default_rng([config.seed, 1])
    return PoseVoteNet(config, keypoint_table(models, config.n_classes), rng)


def step_rng(config: PipelineConfig, epoch: int, step: int) -> np.random.Generator:
    """Stream for the random subsamples of one step; a pure function of its coordinates."""
    return np.random.default_rng([config.seed, 2, epoch, step])


def epoch_order(config: PipelineConfig, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([config.seed, 3, epoch]).permutation(n)


def compute_losses(net: PoseVoteNet, scene: SyntheticScene, models: Mapping[int, ObjectModel],
                   rng: np.random.Generator, coord_graph: LocalGraph | None = None
                   ) -> tuple[dict[str, LossTerm], NetOutput]:
    c = net.config
    out = net(scene.points, scene.colors, scene.labels, rng, coord_graph)
    terms = {
        "seg": loss_seg(out.logits, scene.labels, c.focal_gamma, c.focal_alpha),
        "kp": loss_kp(out.offsets, scene.keypoint_offsets, scene.labels),
        "geom": loss_geom(out.offsets, scene.keypoint_offsets, scene.labels),
        "R": loss_R(out.rotations, scene.labels, scene.poses, models, out.valid),
        "t": loss_t(out.translations, scene.poses, scene.labels),
    }
    return terms, out


def scene_loss(net, scene, models, epoch: int, rng, coord_graph=None) -> tuple[Tensor, dict[str, float]]:
    terms, _ = compute_losses(net, scene, models, rng, coord_graph)
    total = total_loss({k: t.value for k, t in terms.items()}, net.config.loss_weights(), epoch)
    return total, {k: float(t.value.data) for k, t in terms.items()}


@dataclass
class TrainResult:
    net: PoseVoteNet
    log: list[dict] = field(default_factory=list)
    step: int = 0

    def log_csv(self) -> str:
        return format_log(self.log)


def format_log(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for r in rows:
        w.writerow([r["epoch"]] + [repr(float(r[k])) for k in LOG_COLUMNS[1:]])
    return buf.getvalue()


def read_log(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()} for r in rows]


def train_step(net: PoseVoteNet, scene: SyntheticScene, models, epoch: int, step: int, total_steps: int,
               coord_graph: LocalGraph | None = None, batch_id=None) -> tuple[float, dict[str, float], float]:
    """Forward, backward and one optimizer update. Returns ``(total, components, lr)``."""
    c = net.config
    net.store.zero_grad()
    with Tape() as tape:
        total, comps = scene_loss(net, scene, models, epoch, step_rng(c, epoch, step), coord_graph)
        for name, v in comps.items():
            if not math.isfinite(v):
                raise NonFiniteLossError(batch_id if batch_id is not None else step, name)
        if not math.isfinite(float(total.data)):
            raise NonFiniteLossError(batch_id if batch_id is not None else step, "total")
        tape.backward(total)
    lr = one_cycle_lr(step, total_steps, c.max_lr, c.pct_start, c.div_factor, c.final_div_factor)
    adamw_step(net.store, lr, (c.beta1, c.beta2), c.adam_eps, c.weight_decay)
    return float(total.data), comps, lr


def save_training_checkpoint(path, net: PoseVoteNet, epoch: int, step: int, log: list[dict]) -> None:
    meta = {
        "format": "posevote-train",
        "epochs_done": epoch,
        "step": step,
        "config": net.config.to_text(),
        "model_keypoints": net.model_keypoints.tolist(),
        "log": format_log(log),
    }
    ckpt.save(path, net.store, meta)


def load_network(path) -> tuple[PoseVoteNet, dict]:
    """Rebuild a network (parameters and optimizer state) from a training checkpoint."""
    store, meta = ckpt.load(path)
    config = parse_config(meta["config"])
    net = PoseVoteNet(config, np.array(meta["model_keypoints"]), np.random.default_rng(0))
    ckpt.loads(ckpt.dumps(store), into=net.store)
    return net, meta


def train(scenes: Sequence[SyntheticScene], models: Mapping[int, ObjectModel], config: PipelineConfig,
          out_dir=None, resume=None, stop_after: int | None = None,
          progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Train for ``config.epochs`` epochs, one scene per optimizer step.

    With ``out_dir`` a checkpoint ``epoch_XXX.ckpt`` and ``train_log.csv``
    are written after every epoch. ``resume`` continues from a checkpoint
    written here; ``stop_after`` ends early after that many epochs in total
    (the schedule still spans ``config.epochs``).
    """
    if not scenes:
        raise EmptyInputError("training needs at least one scene")
    if resume is not None:
        net, meta = load_network(resume)
        if net.config != config:
            config = net.config
        start_epoch, step, log = meta["epochs_done"], meta["step"], read_log(meta["log"])
    else:
        net = build_network(config, models)
        start_epoch, step, log = 0, 0, []
    n = len(scenes)
    total_steps = config.epochs * n
    last_epoch = config.epochs if stop_after is None else min(config.epochs, stop_after)
    graphs = [net.coord_graph(s.points) for s in scenes]
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    net.train(True)
    weights = config.loss_weights()
    for epoch in range(start_epoch, last_epoch):
        sums = dict.fromkeys(COMPONENTS, 0.0)
        total_sum = 0.0
        lr = 0.0
        for i in epoch_order(config, epoch, n):
            total, comps, lr = train_step(net, scenes[i], models, epoch, step, total_steps, graphs[i],
                                          batch_id=scenes[i].scene_id or int(i))
            step += 1
            total_sum += total
            for k in COMPONENTS:
                sums[k] += comps[k]
        row = {"epoch": epoch + 1, "lr": lr, "delta": weights.delta(epoch), "total": total_sum / n}
        row.update({k: sums[k] / n for k in COMPONENTS})
        log.append(row)
        if out is not None:
            save_training_checkpoint(out / f"epoch_{epoch + 1:03d}.ckpt", net, epoch + 1, step, log)
            (out / "train_log.csv").write_text(format_log(log))
        if progress is not None:
            progress(row)
    net.train(False)
    return TrainResult(net, log, step)
