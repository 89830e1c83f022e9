"""Declarative experiment configuration: one INI-style file per experiment.

Paths are resolved relative to the config file so experiment directories are
relocatable. Modality sections appear as ``[modality:NAME]`` and their file
order fixes the input layout; that order is recorded in checkpoints, so a
model trained under one layout refuses inputs from another.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .model import ModelConfig, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class ModalitySpec:
    name: str
    kind: str                      # "dlsh" | "random"
    depth: int
    bits: int | None = None       # dlsh only
    width: int | None = None      # defaults to 2**bits for dlsh
    seed: int | None = None       # defaults to experiment seed + slot
    embeddings_path: str | None = None

    @property
    def effective_width(self) -> int:
        if self.width is not None:
            return self.width
        if self.bits is None:
            raise ConfigError(f"modality {self.name!r}: width or bits required")
        return 2 ** self.bits


@dataclass
class ExperimentConfig:
    task: str = "session"
    output_dir: str = "runs/out"
    seed: int = 0
    threads: int = 1
    train_interactions: str | None = None
    test_interactions: str | None = None
    modalities: list[ModalitySpec] = field(default_factory=list)
    alpha: float = 0.95
    decay_w: float = 0.01
    model: ModelConfig = field(default_factory=ModelConfig)
    output_modality: str | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    eval_k: int = 20
    cutoffs: tuple = (1, 5, 10, 20)
    aggregator: str = "gmean"
    exclude_seen: bool | None = None   # None = task default
    split_ratio: float = 0.8
    density: dict = field(default_factory=dict)

    def modality_seed(self, spec: ModalitySpec) -> int:
        if spec.seed is not None:
            return spec.seed
        return self.seed + 1000 * (1 + self.modalities.index(spec))

    def resolved_output_modality(self) -> str:
        if self.output_modality is not None:
            return self.output_modality
        for spec in self.modalities:
            if spec.kind == "dlsh":
                return spec.name
        if self.modalities:
            return self.modalities[0].name
        raise ConfigError("no modalities configured")

    def exclude_seen_effective(self) -> bool:
        if self.exclude_seen is not None:
            return self.exclude_seen
        return self.task == "topk"


def _get(section, key, cast, default=None, required=False):
    if key not in section:
        if required:
            raise ConfigError(f"missing required key {key!r} in [{section.name}]")
        return default
    raw = section[key]
    if cast is bool:
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{section.name}] {key}: not a boolean: {raw!r}")
    try:
        return cast(raw)
    except ValueError:
        raise ConfigError(f"[{section.name}] {key}: cannot parse {raw!r}") from None


def _int_list(raw: str) -> list[int]:
    return [int(tok) for tok in raw.replace(",", " ").split()]


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Parse an experiment config file, applying CLI overrides last."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path, encoding="utf-8")
    base = path.parent

    def resolve(p):
        return None if p is None else str((base / p).resolve())

    cfg = ExperimentConfig()
    if parser.has_section("experiment"):
        sec = parser["experiment"]
        cfg.task = _get(sec, "task", str, cfg.task)
        cfg.output_dir = resolve(_get(sec, "output_dir", str, cfg.output_dir))
        cfg.seed = _get(sec, "seed", int, cfg.seed)
        cfg.threads = _get(sec, "threads", int, cfg.threads)
    else:
        cfg.output_dir = resolve(cfg.output_dir)
    if cfg.task not in ("session", "topk"):
        raise ConfigError(f"unknown task {cfg.task!r}")

    if parser.has_section("data"):
        sec = parser["data"]
        cfg.train_interactions = resolve(_get(sec, "train_interactions", str))
        cfg.test_interactions = resolve(_get(sec, "test_interactions", str))

    for name in parser.sections():
        if not name.startswith("modality:"):
            continue
        sec = parser[name]
        modality = name.split(":", 1)[1]
        if _get(sec, "random_codes", bool, False):
            spec = ModalitySpec(modality, "random",
                                depth=_get(sec, "depth", int, required=True),
                                width=_get(sec, "width", int, required=True),
                                seed=_get(sec, "seed", int))
        else:
            spec = ModalitySpec(modality, "dlsh",
                                depth=_get(sec, "depth", int, required=True),
                                bits=_get(sec, "bits", int, required=True),
                                width=_get(sec, "width", int),
                                seed=_get(sec, "seed", int),
                                embeddings_path=resolve(
                                    _get(sec, "embeddings", str, required=True)))
        cfg.modalities.append(spec)

    if parser.has_section("decay"):
        sec = parser["decay"]
        cfg.alpha = _get(sec, "alpha", float, cfg.alpha)
        cfg.decay_w = _get(sec, "w", float, cfg.decay_w)

    if parser.has_section("model"):
        sec = parser["model"]
        cfg.model = ModelConfig(
            hidden_width=_get(sec, "hidden_width", int, cfg.model.hidden_width),
            hidden_layers=_get(sec, "hidden_layers", int, cfg.model.hidden_layers),
            residual=_get(sec, "residual", bool, cfg.model.residual),
            batch_norm=_get(sec, "batch_norm", bool, cfg.model.batch_norm),
            leaky_slope=_get(sec, "leaky_slope", float, cfg.model.leaky_slope),
        )
        cfg.output_modality = _get(sec, "output_modality", str, cfg.output_modality)

    if parser.has_section("train"):
        sec = parser["train"]
        cfg.train = TrainConfig(
            epochs=_get(sec, "epochs", int, cfg.train.epochs),
            batch_size=_get(sec, "batch_size", int, cfg.train.batch_size),
            learning_rate=_get(sec, "learning_rate", float, cfg.train.learning_rate),
            gamma=_get(sec, "gamma", float, cfg.train.gamma),
            seed=cfg.seed,
        )
    else:
        cfg.train = TrainConfig(seed=cfg.seed)

    if parser.has_section("evaluate"):
        sec = parser["evaluate"]
        cfg.eval_k = _get(sec, "k", int, cfg.eval_k)
        if "cutoffs" in sec:
            cfg.cutoffs = tuple(_int_list(sec["cutoffs"]))
        cfg.aggregator = _get(sec, "aggregator", str, cfg.aggregator)
        if "exclude_seen" in sec and sec["exclude_seen"].strip().lower() != "auto":
            cfg.exclude_seen = _get(sec, "exclude_seen", bool)
        cfg.split_ratio = _get(sec, "split_ratio", float, cfg.split_ratio)

    if parser.has_section("density"):
        sec = parser["density"]
        cfg.density = {
            "embeddings": resolve(_get(sec, "embeddings", str)),
            "n_points": _get(sec, "n_points", int, 2000),
            "n_components": _get(sec, "n_components", int, 5),
            "dim": _get(sec, "dim", int, 8),
            "spread": _get(sec, "spread", float, 0.25),
            "n_queries": _get(sec, "n_queries", int, 200),
            "depth_values": _int_list(sec.get("depth_values", "5 10 25 50")),
            "bits_values": _int_list(sec.get("bits_values", "7")),
            "sweep_seeds": _int_list(sec.get("sweep_seeds", "0 1 2")),
            "bandwidth": _get(sec, "bandwidth", float),
            "aggregator": _get(sec, "aggregator", str, "gmean"),
        }

    overrides = overrides or {}
    if overrides.get("seed") is not None:
        cfg.seed = overrides["seed"]
        cfg.train.seed = overrides["seed"]
    if overrides.get("output_dir") is not None:
        cfg.output_dir = str(Path(overrides["output_dir"]).resolve())
    if overrides.get("threads") is not None:
        cfg.threads = overrides["threads"]
    if overrides.get("aggregator") is not None:
        cfg.aggregator = overrides["aggregator"]

    if not cfg.modalities:
        raise ConfigError("config declares no [modality:*] sections")
    return cfg
