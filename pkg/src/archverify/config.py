"""Run configuration: one YAML file feeding every CLI command."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import yaml

from . import __version__
from .augment import AugmentationPolicy
from .data import SPLIT_PRESETS, SplitConfig
from .errors import ConfigError
from .training import TrainingHyperparams

TOP_LEVEL_KEYS = {"paths", "split", "model", "training", "augmentation", "protocol"}
PATH_KEYS = {"manifest", "output_dir", "checkpoint"}
MODEL_KEYS = {"backbone", "input_side", "pretrained", "normalization"}
PROTOCOL_KEYS = {"n_refs", "fusion", "seed", "workers", "rejection_threshold"}

ENV_OUTPUT_DIR = "ARCHVERIFY_OUTPUT_DIR"
ENV_WORKERS = "ARCHVERIFY_WORKERS"


def _check_keys(section: str, d: Mapping, allowed: set) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")


@dataclass
class ModelSettings:
    backbone: str = "toy-cnn"
    input_side: int = 64
    pretrained: bool = False
    normalization: str = "l2"


@dataclass
class ProtocolSettings:
    n_refs: int = 100
    fusion: str = "min"
    seed: int = 0
    workers: int = 1
    rejection_threshold: float = 0.5


@dataclass
class RunConfig:
    manifest: Path | None = None
    output_dir: Path = Path("runs/default")
    checkpoint: Path | None = None
    split: SplitConfig | None = None
    model: ModelSettings = field(default_factory=ModelSettings)
    training: TrainingHyperparams = field(default_factory=TrainingHyperparams)
    augmentation: AugmentationPolicy = field(default_factory=AugmentationPolicy)
    protocol: ProtocolSettings = field(default_factory=ProtocolSettings)
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: Mapping, base_dir: Path | None = None) -> "RunConfig":
        d = dict(d or {})
        _check_keys("top level", d, TOP_LEVEL_KEYS)
        paths = dict(d.get("paths") or {})
        _check_keys("paths", paths, PATH_KEYS)

        def resolve(p):
            if p is None:
                return None
            p = Path(p)
            return p if p.is_absolute() or base_dir is None else base_dir / p

        split_d = d.get("split")
        if isinstance(split_d, str):
            if split_d not in SPLIT_PRESETS:
                raise ConfigError(f"unknown split preset {split_d!r}; presets: {', '.join(SPLIT_PRESETS)}")
            split = SPLIT_PRESETS[split_d]
        elif split_d is not None:
            split = SplitConfig.from_dict(split_d)
        else:
            split = None
        model_d = dict(d.get("model") or {})
        _check_keys("model", model_d, MODEL_KEYS)
        proto_d = dict(d.get("protocol") or {})
        _check_keys("protocol", proto_d, PROTOCOL_KEYS)
        try:
            cfg = cls(
                manifest=resolve(paths.get("manifest")),
                output_dir=resolve(paths.get("output_dir", "runs/default")),
                checkpoint=resolve(paths.get("checkpoint")),
                split=split,
                model=ModelSettings(**model_d),
                training=TrainingHyperparams.from_dict(d.get("training") or {}),
                augmentation=AugmentationPolicy.from_dict(d.get("augmentation") or {}),
                protocol=ProtocolSettings(**proto_d),
                raw=json.loads(json.dumps(d, default=str)),
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        env_out = os.environ.get(ENV_OUTPUT_DIR)
        if env_out:
            cfg.output_dir = Path(env_out)
        env_workers = os.environ.get(ENV_WORKERS)
        if env_workers:
            cfg.protocol.workers = int(env_workers)
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as f:
            try:
                d = yaml.safe_load(f) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"cannot parse {path}: {exc}") from None
        if not isinstance(d, Mapping):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(d, base_dir=path.parent)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()

    def provenance(self, checkpoint_hash: str | None = None, seed: int | None = None) -> dict:
        return {
            "config_hash": self.config_hash(),
            "seed": self.protocol.seed if seed is None else seed,
            "checkpoint_hash": checkpoint_hash,
            "tool_version": __version__,
        }
