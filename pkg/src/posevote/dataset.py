"""Model sets and train/test scene splits derived from a configuration, and their on-disk layout.

Layout of a data directory::

    config.txt
    models/class_<id>.json
    train/scene_<nnnn>.pvs
    test/scene_<nnnn>.pvs
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError
from .pipeline.config import PipelineConfig, load_config, save_config
from .synthdata import ObjectModel, SyntheticScene, default_models, generate_scene, read_model, read_scene, \
    write_model, write_scene

SPLITS = {"train": 10, "test": 11}


@dataclass
class Dataset:
    models: dict[int, ObjectModel]
    train: list[SyntheticScene]
    test: list[SyntheticScene]


def scene_seed(seed: int, split: str, index: int) -> int:
    return int(np.random.SeedSequence([seed, SPLITS[split], index]).generate_state(1)[0])


def make_models(config: PipelineConfig) -> dict[int, ObjectModel]:
    return {m.class_id: m for m in default_models(config.seed, n_vertices=config.n_vertices)}


def make_scenes(models: dict[int, ObjectModel], config: PipelineConfig, split: str, count: int,
                noise_sigma: float | None = None) -> list[SyntheticScene]:
    sigma = config.noise_sigma if noise_sigma is None else noise_sigma
    return [
        generate_scene(list(models.values()), n_points=config.n_points, noise_sigma=sigma,
                       occlusion_fraction=config.occlusion_fraction,
                       background_fraction=config.background_fraction,
                       seed=scene_seed(config.seed, split, i), max_angle=config.max_angle,
                       scene_id=f"{split}-{i:04d}")
        for i in range(count)
    ]


def make_dataset(config: PipelineConfig) -> Dataset:
    models = make_models(config)
    return Dataset(models, make_scenes(models, config, "train", config.n_train),
                   make_scenes(models, config, "test", config.n_test))


def write_dataset(root, data: Dataset, config: PipelineConfig) -> None:
    root = Path(root)
    (root / "models").mkdir(parents=True, exist_ok=True)
    save_config(root / "config.txt", config)
    for c, m in data.models.items():
        write_model(root / "models" / f"class_{c}.json", m)
    for split, scenes in (("train", data.train), ("test", data.test)):
        (root / split).mkdir(exist_ok=True)
        for i, s in enumerate(scenes):
            write_scene(root / split / f"scene_{i:04d}.pvs", s)


def read_models(root) -> dict[int, ObjectModel]:
    paths = sorted((Path(root) / "models").glob("class_*.json"))
    if not paths:
        raise InputError(f"no model files under {root}/models")
    models = [read_model(p) for p in paths]
    return {m.class_id: m for m in models}


def read_split(root, split: str) -> list[SyntheticScene]:
    paths = sorted((Path(root) / split).glob("scene_*.pvs"))
    if not paths:
        raise InputError(f"no scenes under {root}/{split}")
    return [read_scene(p) for p in paths]


def read_dataset_config(root) -> PipelineConfig:
    return load_config(Path(root) / "config.txt")
