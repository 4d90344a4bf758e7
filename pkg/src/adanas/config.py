"""Experiment configuration: YAML in, validated dataclasses out.

Every block is checked for unknown keys before anything trains. See
``docs/config.md`` for the annotated schema.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from adanas.data import AugmentConfig, Dataset, load_dataset, synthetic_task
from adanas.ensemble import WeightMode
from adanas.generator import GeneratorSpec
from adanas.losses import KDConfig
from adanas.search import RunConfig


class ConfigError(ValueError):
    pass


_TOP = {"name", "seed", "repeat", "output_dir", "workers", "dataset", "augment", "generator", "run"}
_DATASET = {"kind", "synthetic", "train_size", "test_size", "classes", "noise", "data_seed",
            "train_path", "test_path", "format", "num_classes", "image_shape"}
_AUGMENT = {"pad_to", "crop_to", "flip", "whiten", "cutout_size"}
_GENERATOR = {"kind", "constant_arch", "start_arch", "depth_increment", "width_increment", "budget"}
_RUN = {"iterations", "kd_mode", "temperature", "kd_t_squared", "lambda_kd", "weight_mode",
        "steps_per_iteration", "batch_size", "base_lr", "momentum", "clip_norm", "weight_lr",
        "weight_steps", "weight_interval", "weight_batch_size", "log_every"}


def _check_keys(block, allowed, where):
    if not isinstance(block, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(block).__name__}")
    unknown = sorted(set(block) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(repr(k) for k in unknown)}")


@dataclass
class ExperimentConfig:
    name: str
    seed: int
    repeat: int
    output_dir: str
    workers: int
    dataset: dict
    augment: AugmentConfig | None
    generator: GeneratorSpec
    run: dict
    raw: dict = field(repr=False, default_factory=dict)

    def run_config(self, seed) -> RunConfig:
        r = self.run
        return RunConfig(
            iterations=r.get("iterations", 1),
            generator=self.generator,
            kd=KDConfig(r.get("kd_mode", "nokd"), r.get("temperature", 1.0), r.get("kd_t_squared", False)),
            weight_mode=WeightMode(r.get("weight_mode", "uniform")),
            steps_per_iteration=r.get("steps_per_iteration", 1000),
            batch_size=r.get("batch_size", 32),
            base_lr=r.get("base_lr", 0.025),
            momentum=r.get("momentum", 0.9),
            clip_norm=r.get("clip_norm", 5.0),
            lambda_kd=r.get("lambda_kd", 1.0),
            seed=seed,
            weight_lr=r.get("weight_lr", 0.01),
            weight_steps=r.get("weight_steps", 100),
            weight_interval=r.get("weight_interval", 100),
            weight_batch_size=r.get("weight_batch_size"),
            log_every=r.get("log_every", 100),
            augment=self.augment,
        )

    def config_hash(self):
        """Hash of the experiment definition; output location and worker count excluded."""
        body = {k: v for k, v in self.raw.items() if k not in ("output_dir", "workers")}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()

    def load_data(self, base_dir=".") -> Dataset:
        d = self.dataset
        kind = d.get("kind", "synthetic")
        if kind == "synthetic":
            return synthetic_task(d.get("synthetic", "spirals"), d.get("train_size", 300), d.get("classes", 3),
                                  d.get("noise", 0.0), d.get("data_seed", 0), d.get("test_size"))
        base = Path(base_dir)
        test = d.get("test_path")
        return load_dataset(base / d["train_path"], d.get("format", kind),
                            test_source=None if test is None else base / test,
                            num_classes=d.get("num_classes"), image_shape=d.get("image_shape"))


def parse_config(raw: dict) -> ExperimentConfig:
    _check_keys(raw, _TOP, "config")
    for key in ("dataset", "generator", "run"):
        if key not in raw:
            raise ConfigError(f"config: missing required block {key!r}")
    _check_keys(raw["dataset"], _DATASET, "dataset")
    _check_keys(raw["generator"], _GENERATOR, "generator")
    _check_keys(raw["run"], _RUN, "run")
    kind = raw["dataset"].get("kind", "synthetic")
    if kind not in ("synthetic", "csv", "binary"):
        raise ConfigError(f"dataset.kind: expected synthetic, csv or binary, got {kind!r}")
    if kind != "synthetic":
        for key in ("train_path", "test_path"):
            if key not in raw["dataset"]:
                raise ConfigError(f"dataset.{key} is required for file datasets")
    try:
        augment = None
        if raw.get("augment") is not None:
            _check_keys(raw["augment"], _AUGMENT, "augment")
            augment = AugmentConfig(**raw["augment"])
        generator = GeneratorSpec(**raw["generator"])
        cfg = ExperimentConfig(
            name=str(raw.get("name", "experiment")),
            seed=int(raw.get("seed", 0)),
            repeat=int(raw.get("repeat", 1)),
            output_dir=str(raw.get("output_dir", "runs")),
            workers=int(raw.get("workers", 1)),
            dataset=dict(raw["dataset"]),
            augment=augment,
            generator=generator,
            run=dict(raw["run"]),
            raw=raw,
        )
        cfg.run_config(cfg.seed)  # validates run block values
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.repeat < 1 or cfg.workers < 1 or cfg.seed < 0:
        raise ConfigError("repeat and workers must be >= 1, seed >= 0")
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if raw is None:
        raise ConfigError(f"{path}: empty config")
    return parse_config(raw)
