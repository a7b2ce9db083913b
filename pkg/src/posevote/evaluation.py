"""Dataset evaluation: predictors, per-scene records, AUC reports and their CSV forms."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .diffcore import no_grad
from .errors import EmptyInputError, MissingClassError, RankDeficiencyError
from .geometry import RigidPose, umeyama_fit
from .metrics import DEFAULT_MAX_THRESHOLD, accuracy_curve, add_metric, adds_metric, auc, success_at_diameter
from .pipeline.selection import select_pose
from .synthdata import ObjectModel, SyntheticScene

REPORT_DECIMALS = 6  # AUCs are reported in percent to this many decimals
RECORD_COLUMNS = ("scene", "class", "add", "adds", "add_s_mixed", "success_at_0.1d")

Predictor = Callable[[SyntheticScene], Mapping[int, "RigidPose | None"]]


@dataclass
class EvalRecord:
    scene: str
    class_id: int
    pred: RigidPose | None
    gt: RigidPose
    add: float
    adds: float
    add_s_mixed: float
    success: bool


@dataclass
class ClassAuc:
    adds_auc: float
    add_s_auc: float
    count: int


@dataclass
class AucReport:
    per_class: dict[int, ClassAuc]
    max_threshold: float
    curves: dict[int, dict[str, np.ndarray]] = field(default_factory=dict)

    @property
    def mean_adds(self) -> float:
        return float(np.mean([c.adds_auc for c in self.per_class.values()]))

    @property
    def mean_add_s(self) -> float:
        return float(np.mean([c.add_s_auc for c in self.per_class.values()]))

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "adds_auc", "add_s_auc", "count", "max_threshold"])
        for c, r in sorted(self.per_class.items()):
            w.writerow([c, repr(r.adds_auc), repr(r.add_s_auc), r.count, repr(self.max_threshold)])
        w.writerow(["mean", repr(self.mean_adds), repr(self.mean_add_s),
                    sum(r.count for r in self.per_class.values()), repr(self.max_threshold)])
        return buf.getvalue()

    def curves_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "metric", "threshold", "accuracy"])
        for c, curves in sorted(self.curves.items()):
            for metric in ("adds", "add_s_mixed"):
                thresholds, acc = curves[metric]
                for t, a in zip(thresholds, acc):
                    w.writerow([c, metric, repr(float(t)), repr(float(a))])
        return buf.getvalue()

    def lines(self) -> list[str]:
        out = [f"{'class':>6} {'ADD-S AUC':>10} {'ADD(S) AUC':>11} {'n':>4}"]
        for c, r in sorted(self.per_class.items()):
            out.append(f"{c:>6} {r.adds_auc:>10.2f} {r.add_s_auc:>11.2f} {r.count:>4}")
        out.append(f"{'mean':>6} {self.mean_adds:>10.2f} {self.mean_add_s:>11.2f}")
        return out


# ---------------------------------------------------------------- predictors

def gt_passthrough(scene: SyntheticScene) -> dict[int, RigidPose]:
    return dict(scene.poses)


def umeyama_oracle(models: Mapping[int, ObjectModel]) -> Predictor:
    """Least-squares fit of each model's keypoints onto the scene's ground-truth keypoint targets."""

    def predict(scene: SyntheticScene) -> dict[int, RigidPose | None]:
        targets = scene.keypoint_targets()
        out = {}
        for c in scene.class_ids:
            mask = scene.labels == c
            if not mask.any():
                out[c] = None
                continue
            try:
                out[c] = umeyama_fit(models[c].keypoints, targets[mask].mean(axis=0))
            except RankDeficiencyError:
                out[c] = None
        return out

    return predict


def network_predictor(net, seed: int = 0) -> Predictor:
    """Frozen-network predictor: own segmentation, per-point candidates, mean-nearest selection."""

    def predict(scene: SyntheticScene) -> dict[int, RigidPose | None]:
        net.train(False)
        with no_grad():
            o = net(scene.points, scene.colors, None, np.random.default_rng([seed, 4]))
        labels = np.argmax(o.logits.data, axis=1)
        out = {}
        for c in scene.class_ids:
            try:
                out[c] = select_pose(o.rotations.data, o.translations.data, labels, c, o.valid)
            except MissingClassError:
                out[c] = None
        return out

    return predict


# ---------------------------------------------------------------- evaluation

def score(scene_id: str, class_id: int, pred: RigidPose | None, gt: RigidPose, model: ObjectModel,
          max_threshold: float) -> EvalRecord:
    if pred is None:
        # a missing prediction fails at the threshold ceiling
        return EvalRecord(scene_id, class_id, None, gt, max_threshold, max_threshold, max_threshold, False)
    add = add_metric(pred, gt, model)
    adds = adds_metric(pred, gt, model)
    mixed = adds if model.symmetric else add
    return EvalRecord(scene_id, class_id, pred, gt, add, adds, mixed, success_at_diameter(mixed, model))


def _report_value(x: float) -> float:
    return round(x, REPORT_DECIMALS)


def aggregate(records: Sequence[EvalRecord] | Sequence[dict], max_threshold: float = DEFAULT_MAX_THRESHOLD,
              curve_samples: int = 101) -> AucReport:
    """Per-class AUCs from records (objects or parsed CSV rows)."""
    if not records:
        raise EmptyInputError("no evaluation records")
    by_class: dict[int, tuple[list, list]] = {}
    for r in records:
        if isinstance(r, EvalRecord):
            c, adds, mixed = r.class_id, r.adds, r.add_s_mixed
        else:
            c, adds, mixed = int(r["class"]), float(r["adds"]), float(r["add_s_mixed"])
        by_class.setdefault(c, ([], []))
        by_class[c][0].append(adds)
        by_class[c][1].append(mixed)
    per_class, curves = {}, {}
    for c, (adds, mixed) in sorted(by_class.items()):
        per_class[c] = ClassAuc(_report_value(auc(adds, max_threshold)), _report_value(auc(mixed, max_threshold)),
                                len(adds))
        curves[c] = {"adds": accuracy_curve(adds, max_threshold, curve_samples),
                     "add_s_mixed": accuracy_curve(mixed, max_threshold, curve_samples)}
    return AucReport(per_class, max_threshold, curves)


def evaluate_dataset(scenes: Sequence[SyntheticScene], predictor: Predictor, models: Mapping[int, ObjectModel],
                     max_threshold: float = DEFAULT_MAX_THRESHOLD) -> tuple[AucReport, list[EvalRecord]]:
    if not scenes:
        raise EmptyInputError("no scenes to evaluate")
    records = []
    for i, scene in enumerate(scenes):
        preds = predictor(scene)
        sid = scene.scene_id or str(i)
        for c in scene.class_ids:
            records.append(score(sid, c, preds.get(c), scene.poses[c], models[c], max_threshold))
    return aggregate(records, max_threshold), records


def records_csv(records: Sequence[EvalRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for r in records:
        w.writerow([r.scene, r.class_id, repr(r.add), repr(r.adds), repr(r.add_s_mixed), int(r.success)])
    return buf.getvalue()


def read_records_csv(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))
