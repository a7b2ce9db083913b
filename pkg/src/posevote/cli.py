"""Command-line entry points: ``gen``, ``train``, ``eval``, ``gradcheck``, ``demo``, ``experiment``.

Exit status: 0 on success, 1 when inputs or results fail validation, 2 on
usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .dataset import make_dataset, make_models, make_scenes, read_dataset_config, read_models, read_split, \
    write_dataset
from .errors import PoseVoteError
from .evaluation import evaluate_dataset, gt_passthrough, network_predictor, records_csv, umeyama_oracle
from .pipeline.config import PipelineConfig, load_config, save_config
from .pipeline.train import load_network, train

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        config = config.with_overrides(seed=args.seed)
    return config


def _out(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen(args) -> int:
    config = _config(args)
    out = _out(args, "data")
    data = make_dataset(config)
    write_dataset(out, data, config)
    print(f"wrote {len(data.models)} models, {len(data.train)} train and {len(data.test)} test scenes to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    data_dir = Path(args.data)
    config = _config(args) if args.config else read_dataset_config(data_dir)
    if args.seed is not None:
        config = config.with_overrides(seed=args.seed)
    if args.epochs is not None:
        config = config.with_overrides(epochs=args.epochs)
    out = _out(args, "run")
    models = read_models(data_dir)
    scenes = read_split(data_dir, "train")
    if args.limit is not None:
        scenes = scenes[: args.limit]
    save_config(out / "config.txt", config)
    t0 = time.perf_counter()

    def progress(row):
        print(f"epoch {row['epoch']:3d} lr={row['lr']:.2e} delta={row['delta']:g} total={row['total']:.5f} "
              f"({time.perf_counter() - t0:.0f}s)", flush=True)

    result = train(scenes, models, config, out_dir=out, resume=args.resume, stop_after=args.stop_after,
                   progress=progress)
    final = sorted(out.glob("epoch_*.ckpt"))[-1]
    (out / "final.ckpt").write_bytes(final.read_bytes())
    print(f"trained {result.step} steps; final checkpoint {out / 'final.ckpt'}")
    return EXIT_OK


def _write_report(out: Path, report, records) -> None:
    (out / "report.csv").write_text(report.summary_csv())
    (out / "records.csv").write_text(records_csv(records))
    (out / "curves.csv").write_text(report.curves_csv())
    print("\n".join(report.lines()))


def cmd_eval(args) -> int:
    data_dir = Path(args.data)
    models = read_models(data_dir)
    scenes = read_split(data_dir, args.split)
    config = read_dataset_config(data_dir)
    if args.predictor == "network":
        if not args.checkpoint:
            raise PoseVoteError("the network predictor needs --checkpoint")
        net, _ = load_network(args.checkpoint)
        predictor = network_predictor(net, args.seed if args.seed is not None else net.config.seed)
    elif args.predictor == "umeyama":
        predictor = umeyama_oracle(models)
    else:
        predictor = gt_passthrough
    report, records = evaluate_dataset(scenes, predictor, models, config.max_threshold)
    _write_report(_out(args, "eval"), report, records)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsweep import full_sweep

    seed = _config(args).seed
    entries = full_sweep(seed)
    lines = [e.line() for e in entries]
    out = _out(args, "gradcheck")
    (out / "gradcheck.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    failed = [e.name for e in entries if not e.passed]
    print(f"{len(entries) - len(failed)}/{len(entries)} passed")
    return EXIT_OK if not failed else EXIT_INVALID


def cmd_demo(args) -> int:
    """One scene end to end, with every intermediate stage written out."""
    from .diffcore import no_grad
    from .evaluation import score
    from .pipeline.selection import select_all
    from .pipeline.train import build_network

    config = _config(args)
    out = _out(args, "demo")
    if args.checkpoint:
        net, _ = load_network(args.checkpoint)
        config = net.config.with_overrides(seed=config.seed)
    models = make_models(config)
    if not args.checkpoint:
        net = build_network(config, models)
    scene = make_scenes(models, config, "test", 1)[0]
    net.train(False)
    with no_grad():
        o = net(scene.points, scene.colors, None, np.random.default_rng([config.seed, 4]))
    labels = np.argmax(o.logits.data, axis=1)
    poses = select_all(o.rotations.data, o.translations.data, labels, scene.class_ids, o.valid)
    np.savez(
        out / "stages.npz", points=scene.points, colors=scene.colors, gt_labels=scene.labels,
        gt_offsets=scene.keypoint_offsets, offsets=o.offsets.data, votes=scene.points[:, None, :] + o.offsets.data,
        logits=o.logits.data, labels=labels, r6=o.r6.data, rotations=o.rotations.data, valid=o.valid,
        translations=o.translations.data,
    )
    summary = {"scene": scene.scene_id, "n_points": scene.n_points, "invalid_candidates": int((~o.valid).sum()),
               "classes": {}}
    for c in scene.class_ids:
        rec = score(scene.scene_id, c, poses[c], scene.poses[c], models[c], config.max_threshold)
        summary["classes"][str(c)] = {
            "points_predicted": int((labels == c).sum()), "points_true": int((scene.labels == c).sum()),
            "pred": None if poses[c] is None else {"R": poses[c].rotation.tolist(), "t": poses[c].translation.tolist()},
            "gt": {"R": scene.poses[c].rotation.tolist(), "t": scene.poses[c].translation.tolist()},
            "add": rec.add, "adds": rec.adds, "add_s_mixed": rec.add_s_mixed, "success_at_0.1d": rec.success,
        }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary["classes"], indent=2))
    return EXIT_OK


def cmd_experiment(args) -> int:
    """The desk-scale run: generate, train and score the held-out split."""
    from .experiment import DESK_CONFIG, run_desk_experiment

    config = load_config(args.config) if args.config else DESK_CONFIG
    if args.seed is not None:
        config = config.with_overrides(seed=args.seed)
    if args.epochs is not None:
        config = config.with_overrides(epochs=args.epochs)
    out = _out(args, "experiment")

    def progress(row):
        print(f"epoch {row['epoch']:3d} delta={row['delta']:g} total={row['total']:.5f}", flush=True)

    result = run_desk_experiment(out, config, progress)
    print(f"training took {result.train_seconds / 60:.1f} min")
    print("\n".join(result.report.lines()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the configuration seed")
    common.add_argument("--config", default=None, help="flat key = value configuration file")
    common.add_argument("--out", default=None, help="output directory")
    p = _Parser(prog="posevote", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen", parents=[common], help="generate models and train/test scenes")
    t = sub.add_parser("train", parents=[common], help="train the pipeline")
    t.add_argument("--data", required=True, help="directory written by gen")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--limit", type=int, default=None, help="use only the first N training scenes")
    t.add_argument("--resume", default=None, help="checkpoint to continue from")
    t.add_argument("--stop-after", type=int, default=None, help="stop once this many epochs are done")
    e = sub.add_parser("eval", parents=[common], help="evaluate a predictor and write the AUC report")
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test", choices=("train", "test"))
    e.add_argument("--predictor", default="network", choices=("network", "umeyama", "gt"))
    e.add_argument("--checkpoint", default=None)
    sub.add_parser("gradcheck", parents=[common], help="finite-difference sweep over every op and block")
    d = sub.add_parser("demo", parents=[common], help="single scene end to end with stage dumps")
    d.add_argument("--checkpoint", default=None)
    x = sub.add_parser("experiment", parents=[common], help="desk-scale generate, train and evaluate run")
    x.add_argument("--epochs", type=int, default=None)
    return p


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck, "demo": cmd_demo,
            "experiment": cmd_experiment}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (PoseVoteError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
