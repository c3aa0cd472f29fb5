"""Experiment configuration: INI-style files with validated keys and defaults.

Grammar (configparser syntax, all keys optional unless noted):

    [dataset]
    source = synthetic | idx
    train_images / train_labels / test_images / test_labels = <path>  (idx)
    num_samples / num_test_samples / num_classes / num_features = <int>
    cluster_spread = <float>
    data_seed = <int>
    partition = iid | shards
    shards_per_device = <int>

    [simulation]
    protocols = async, fedavg
    schedulers = random, significance, frequency
    weightings = equal, fOld, fFresh, age:<gamma>
    normalization = scheduled | all
    num_devices / max_scheduled / num_iterations = <int>
    t_max / aggregation_period = <float>
    compute_mode = redraw | fixed
    init = zeros | random
    fedavg_literal = true | false

    [training]
    local_steps / batch_size = <int>
    reg_lambda = <float>
    lr_schedule = <threshold>:<rate>, ...

    [output]
    dir = <path>
    seeds = <int>, ...

Relative IDX paths are resolved against the ASYNCFL_DATA_DIR environment
variable when it is set.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, replace

from .model import TrainingHyper
from .server import GAMMA_FRESH, GAMMA_OLD, PolicyConfig, SCHEDULERS

DATA_DIR_ENV = "ASYNCFL_DATA_DIR"

_ALLOWED_KEYS = {
    "dataset": {
        "source", "train_images", "train_labels", "test_images", "test_labels",
        "num_samples", "num_test_samples", "num_classes", "num_features",
        "cluster_spread", "data_seed", "partition", "shards_per_device",
    },
    "simulation": {
        "protocols", "schedulers", "weightings", "normalization",
        "num_devices", "max_scheduled", "num_iterations", "t_max",
        "aggregation_period", "compute_mode", "init", "fedavg_literal",
    },
    "training": {"local_steps", "batch_size", "reg_lambda", "lr_schedule"},
    "output": {"dir", "seeds"},
}


class ConfigError(ValueError):
    """Raised for unknown keys or out-of-range values in a config file."""


@dataclass(frozen=True)
class ExperimentConfig:
    # dataset
    source: str = "synthetic"
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    num_samples: int = 6000
    num_test_samples: int = 1000
    num_classes: int = 10
    num_features: int = 64
    cluster_spread: float = 0.25
    data_seed: int = 0
    partition: str = "iid"
    shards_per_device: int = 2
    # simulation grid
    protocols: tuple = ("async",)
    schedulers: tuple = ("random",)
    weightings: tuple = ("equal",)
    normalization: str = "scheduled"
    num_devices: int = 100
    max_scheduled: int = 30
    num_iterations: int = 40
    t_max: float = 1.0
    aggregation_period: float | None = None  # async default: t_max / 4
    compute_mode: str = "redraw"
    init: str = "zeros"
    fedavg_literal: bool = False
    # training
    local_steps: int = 5
    batch_size: int = 32
    reg_lambda: float = 0.02
    lr_schedule: tuple = ((20, 0.01), (40, 0.005))
    # output
    output_dir: str = "results"
    seeds: tuple = (1, 2, 3)

    def hyper(self) -> TrainingHyper:
        return TrainingHyper(local_epochs=self.local_steps,
                             batch_size=self.batch_size,
                             lr_schedule=self.lr_schedule,
                             reg_lambda=self.reg_lambda)

    def policy(self, scheduler: str, weighting_name: str) -> PolicyConfig:
        weighting, gamma = parse_weighting(weighting_name)
        return PolicyConfig(scheduler=scheduler, weighting=weighting,
                            gamma=gamma, normalization=self.normalization,
                            max_scheduled=self.max_scheduled)


def parse_weighting(name: str) -> tuple:
    """Map a weighting name to (mode, gamma)."""
    if name == "equal":
        return "equal", 1.0
    if name == "fOld":
        return "age", GAMMA_OLD
    if name == "fFresh":
        return "age", GAMMA_FRESH
    if name.startswith("age:"):
        try:
            gamma = float(name.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"weightings: bad gamma in {name!r}")
        if gamma <= 0:
            raise ConfigError(f"weightings: gamma must be positive in {name!r}")
        return "age", gamma
    raise ConfigError(f"weightings: unknown weighting name {name!r}")


def _split(value: str) -> list:
    return [item.strip() for item in value.split(",") if item.strip()]


def _parse_lr_schedule(value: str) -> tuple:
    segments = []
    for item in _split(value):
        try:
            threshold, rate = item.split(":")
            segments.append((int(threshold), float(rate)))
        except ValueError:
            raise ConfigError(f"lr_schedule: cannot parse segment {item!r}")
    if not segments:
        raise ConfigError("lr_schedule: no segments given")
    return tuple(segments)


def resolve_data_path(path: str) -> str:
    """Resolve a dataset path against ASYNCFL_DATA_DIR for relative paths."""
    base = os.environ.get(DATA_DIR_ENV)
    if base and not os.path.isabs(path):
        return os.path.join(base, path)
    return path


def _get(section, key, cast, current):
    if key not in section:
        return current
    raw = section[key]
    try:
        return cast(raw)
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(f"{key}: cannot parse value {raw!r}")


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(raw)


def load_config(path) -> ExperimentConfig:
    """Parse and validate a config file, applying defaults for missing keys."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")

    for section in parser.sections():
        if section not in _ALLOWED_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _ALLOWED_KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")

    cfg = ExperimentConfig()
    ds = parser["dataset"] if "dataset" in parser else {}
    sim = parser["simulation"] if "simulation" in parser else {}
    tr = parser["training"] if "training" in parser else {}
    out = parser["output"] if "output" in parser else {}

    cfg = replace(
        cfg,
        source=_get(ds, "source", str, cfg.source),
        train_images=_get(ds, "train_images", str, cfg.train_images),
        train_labels=_get(ds, "train_labels", str, cfg.train_labels),
        test_images=_get(ds, "test_images", str, cfg.test_images),
        test_labels=_get(ds, "test_labels", str, cfg.test_labels),
        num_samples=_get(ds, "num_samples", int, cfg.num_samples),
        num_test_samples=_get(ds, "num_test_samples", int, cfg.num_test_samples),
        num_classes=_get(ds, "num_classes", int, cfg.num_classes),
        num_features=_get(ds, "num_features", int, cfg.num_features),
        cluster_spread=_get(ds, "cluster_spread", float, cfg.cluster_spread),
        data_seed=_get(ds, "data_seed", int, cfg.data_seed),
        partition=_get(ds, "partition", str, cfg.partition),
        shards_per_device=_get(ds, "shards_per_device", int, cfg.shards_per_device),
        protocols=tuple(_get(sim, "protocols", _split, list(cfg.protocols))),
        schedulers=tuple(_get(sim, "schedulers", _split, list(cfg.schedulers))),
        weightings=tuple(_get(sim, "weightings", _split, list(cfg.weightings))),
        normalization=_get(sim, "normalization", str, cfg.normalization),
        num_devices=_get(sim, "num_devices", int, cfg.num_devices),
        max_scheduled=_get(sim, "max_scheduled", int, cfg.max_scheduled),
        num_iterations=_get(sim, "num_iterations", int, cfg.num_iterations),
        t_max=_get(sim, "t_max", float, cfg.t_max),
        aggregation_period=_get(sim, "aggregation_period", float,
                                cfg.aggregation_period),
        compute_mode=_get(sim, "compute_mode", str, cfg.compute_mode),
        init=_get(sim, "init", str, cfg.init),
        fedavg_literal=_get(sim, "fedavg_literal", _parse_bool, cfg.fedavg_literal),
        local_steps=_get(tr, "local_steps", int, cfg.local_steps),
        batch_size=_get(tr, "batch_size", int, cfg.batch_size),
        reg_lambda=_get(tr, "reg_lambda", float, cfg.reg_lambda),
        lr_schedule=_get(tr, "lr_schedule", _parse_lr_schedule, cfg.lr_schedule),
        output_dir=_get(out, "dir", str, cfg.output_dir),
        seeds=tuple(_get(out, "seeds", lambda v: [int(s) for s in _split(v)],
                         list(cfg.seeds))),
    )
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    if cfg.source not in ("synthetic", "idx"):
        raise ConfigError(f"source: unknown dataset source {cfg.source!r}")
    if cfg.source == "idx":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if not getattr(cfg, key):
                raise ConfigError(f"{key}: required when source = idx")
    if cfg.partition not in ("iid", "shards"):
        raise ConfigError(f"partition: unknown mode {cfg.partition!r}")
    if cfg.shards_per_device < 1:
        raise ConfigError("shards_per_device: must be >= 1")
    for protocol in cfg.protocols:
        if protocol not in ("async", "fedavg"):
            raise ConfigError(f"protocols: unknown protocol {protocol!r}")
    for scheduler in cfg.schedulers:
        if scheduler not in SCHEDULERS:
            raise ConfigError(f"schedulers: unknown scheduler {scheduler!r}")
    for weighting in cfg.weightings:
        parse_weighting(weighting)
    if cfg.normalization not in ("scheduled", "all"):
        raise ConfigError(f"normalization: unknown mode {cfg.normalization!r}")
    if cfg.max_scheduled < 1:
        raise ConfigError("max_scheduled: must be >= 1")
    if cfg.num_devices < 1:
        raise ConfigError("num_devices: must be >= 1")
    if cfg.t_max <= 0:
        raise ConfigError("t_max: must be positive")
    if cfg.aggregation_period is not None and cfg.aggregation_period <= 0:
        raise ConfigError("aggregation_period: must be positive")
    if cfg.compute_mode not in ("redraw", "fixed"):
        raise ConfigError(f"compute_mode: unknown mode {cfg.compute_mode!r}")
    if cfg.init not in ("zeros", "random"):
        raise ConfigError(f"init: unknown mode {cfg.init!r}")
    if cfg.local_steps < 0:
        raise ConfigError("local_steps: must be >= 0")
    if cfg.batch_size < 1:
        raise ConfigError("batch_size: must be >= 1")
    if cfg.reg_lambda < 0:
        raise ConfigError("reg_lambda: must be >= 0")
    if not cfg.seeds:
        raise ConfigError("seeds: at least one seed required")
    thresholds = [t for t, _ in cfg.lr_schedule]
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ConfigError("lr_schedule: thresholds must be strictly increasing")
    if any(rate <= 0 for _, rate in cfg.lr_schedule):
        raise ConfigError("lr_schedule: rates must be positive")
