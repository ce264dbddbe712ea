"""Run configuration: dataclasses mirrored 1:1 by the TOML config file.

Environment overrides: ``KDSELECT_SEED`` replaces the configured seed,
``KDSELECT_DATA_DIR`` points the service at its storage root.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, asdict, fields
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["TrainConfig", "ModuleFlags", "ZooParams", "EmbedderConfig", "RunConfig",
           "ConfigError", "load_run_config", "apply_env_overrides"]

PRUNING_MODES = ("none", "infobatch", "bucketed")
ENCODER_KINDS = ("mlp", "temporal-conv")


class ConfigError(ValueError):
    """Raised for unusable configuration values."""


@dataclass
class TrainConfig:
    """Hyperparameters of one selector training run."""

    window_len: int = 64            # subsequence length L
    stride: int = 0                 # 0 -> window_len // 2
    encoder: str = "mlp"            # mlp | temporal-conv
    learning_rate: float = 0.05
    momentum: float = 0.0
    clip_bound: float = 5.0         # global gradient-norm clip
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    soft_label_temp: float = 0.25   # temperature for performance-softmax targets
    soft_label_weight: float = 0.4  # alpha: mix between hard CE and soft CE
    metadata_weight: float = 0.78   # lambda: weight of the InfoNCE alignment term
    nce_temp: float = 0.1           # InfoNCE similarity temperature
    proj_dim: int = 64              # shared projection space dim (H)
    embed_dim: int = 64             # text embedding dim for the hashing embedder
    prune_ratio: float = 0.8        # r: drop probability inside prunable sets
    lsh_bits: int = 14              # sign-hash code width
    loss_bins: int = 8              # equi-depth bins over running mean loss
    anneal_fraction: float = 0.125  # final fraction of epochs with pruning off
    context_margin: int = -1        # label-span margin; -1 -> window_len // 2

    def __post_init__(self) -> None:
        if self.stride == 0:
            self.stride = max(1, self.window_len // 2)
        if self.context_margin < 0:
            self.context_margin = self.window_len // 2
        if self.encoder not in ENCODER_KINDS:
            raise ConfigError(f"encoder must be one of {ENCODER_KINDS}, got {self.encoder!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0.0 <= self.prune_ratio < 1.0:
            raise ConfigError("prune_ratio must be in [0, 1)")
        if self.soft_label_temp <= 0:
            raise ConfigError("soft_label_temp must be > 0")
        if self.nce_temp <= 0:
            raise ConfigError("nce_temp must be > 0")
        if self.lsh_bits < 1:
            raise ConfigError("lsh_bits must be >= 1")
        if self.loss_bins < 1:
            raise ConfigError("loss_bins must be >= 1")
        if not 0.0 <= self.soft_label_weight <= 1.0:
            raise ConfigError("soft_label_weight must be in [0, 1]")
        if self.metadata_weight < 0.0:
            raise ConfigError("metadata_weight must be >= 0")
        if not 0.0 <= self.anneal_fraction <= 1.0:
            raise ConfigError("anneal_fraction must be in [0, 1]")
        if self.window_len < 2:
            raise ConfigError("window_len must be >= 2")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class ModuleFlags:
    """Which optional learning modules are active for a run."""

    soft_labels: bool = False
    metadata: bool = False
    pruning: str = "none"  # none | infobatch | bucketed

    def __post_init__(self) -> None:
        if self.pruning not in PRUNING_MODES:
            raise ConfigError(f"pruning must be one of {PRUNING_MODES}, got {self.pruning!r}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class ZooParams:
    """Detector hyperparameters; ``window`` is the sliding-embedding width."""

    window: int = 0                 # 0 -> window_len // 2 at pipeline level
    seed: int = 0
    iforest_trees: int = 100
    iforest_subsample: int = 256
    lof_neighbors: int = 10
    hbos_bins: int = 10
    pca_variance: float = 0.9
    poly_degree: int = 3

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class EmbedderConfig:
    """Text embedder selection: hashing bag-of-words or a precomputed file."""

    kind: str = "feature-hash"      # feature-hash | precomputed-file
    dim: int = 64
    path: Optional[str] = None      # embedding CSV for precomputed-file mode

    def __post_init__(self) -> None:
        if self.kind not in ("feature-hash", "precomputed-file"):
            raise ConfigError(f"unknown embedder kind {self.kind!r}")
        if self.kind == "precomputed-file" and not self.path:
            raise ConfigError("precomputed-file embedder requires a path")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class RunConfig:
    """Everything a run needs: training, flags, zoo, embedder."""

    train: TrainConfig = field(default_factory=TrainConfig)
    flags: ModuleFlags = field(default_factory=ModuleFlags)
    zoo: ZooParams = field(default_factory=ZooParams)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)

    def to_dict(self) -> dict[str, Any]:
        return {
            "train": self.train.to_dict(),
            "flags": self.flags.to_dict(),
            "zoo": self.zoo.to_dict(),
            "embedder": self.embedder.to_dict(),
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "RunConfig":
        def build(datacls, table: dict[str, Any]):
            known = {f.name for f in fields(datacls)}
            unknown = set(table) - known
            if unknown:
                raise ConfigError(
                    f"unknown {datacls.__name__} keys: {', '.join(sorted(unknown))}"
                )
            return datacls(**table)

        cfg = cls(
            train=build(TrainConfig, dict(raw.get("train", {}))),
            flags=build(ModuleFlags, dict(raw.get("flags", {}))),
            zoo=build(ZooParams, dict(raw.get("zoo", {}))),
            embedder=build(EmbedderConfig, dict(raw.get("embedder", {}))),
        )
        unknown = set(raw) - {"train", "flags", "zoo", "embedder"}
        if unknown:
            raise ConfigError(f"unknown config tables: {', '.join(sorted(unknown))}")
        return cfg


def apply_env_overrides(cfg: RunConfig) -> RunConfig:
    """KDSELECT_SEED replaces the configured seed when set."""
    env_seed = os.environ.get("KDSELECT_SEED")
    if env_seed is not None:
        try:
            cfg.train.seed = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"KDSELECT_SEED must be an integer, got {env_seed!r}") from exc
    return cfg


def load_run_config(path: str | Path | None = None,
                    overrides: dict[str, Any] | None = None) -> RunConfig:
    """Load a RunConfig from TOML, applying env and explicit overrides."""
    raw: dict[str, Any] = {}
    if path is not None:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    if overrides:
        for table, values in overrides.items():
            raw.setdefault(table, {}).update(values)
    return apply_env_overrides(RunConfig.from_dict(raw))
