"""Run configuration and TOML loading."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .local_update import LocalConfig
from .model import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ALGORITHMS = (
    "fedselect",
    "fedavg",
    "fedavg_ft",
    "local_only",
    "fixed_partition",
    "personalize_least",
    "random_partition",
)


@dataclass(frozen=True)
class AlgorithmSpec:
    kind: str = "fedselect"
    # fixed_partition: layer id personalized by every client (negative counts from the end)
    partition_layer: int | None = None
    # random_partition: fraction of parameters personalized
    partition_fraction: float | None = None
    ft_epochs: int | None = None
    ft_lr: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.kind!r}; choose from {', '.join(ALGORITHMS)}")
        if (self.partition_layer is not None) != (self.kind == "fixed_partition"):
            raise ConfigError("partition_layer is required for, and only for, fixed_partition")
        if (self.partition_fraction is not None) != (self.kind == "random_partition"):
            raise ConfigError("partition_fraction is required for, and only for, random_partition")
        if self.partition_fraction is not None and not 0.0 <= self.partition_fraction <= 1.0:
            raise ConfigError("partition_fraction must lie in [0, 1]")
        if (self.ft_epochs is not None) != (self.kind == "fedavg_ft"):
            raise ConfigError("ft_epochs is required for, and only for, fedavg_ft")
        if self.ft_epochs is not None and self.ft_epochs < 0:
            raise ConfigError("ft_epochs must be >= 0")


@dataclass(frozen=True)
class DataConfig:
    source: str = "blobs"
    csv_path: str | None = None
    n_classes: int = 10
    input_dim: int = 20
    latent_dim: int = 0
    # 0 sizes the pool to exactly what the partition needs
    n_per_class: int = 0
    spread: float = 1.0
    shard: int = 2
    train_size: int = 100
    test_size: int = 50
    feature_shift: float = 0.0

    def __post_init__(self) -> None:
        if self.source not in ("blobs", "csv"):
            raise ConfigError(f"unknown data source {self.source!r}")
        if self.source == "csv" and not self.csv_path:
            raise ConfigError("csv source needs csv_path")
        if self.feature_shift < 0:
            raise ConfigError("feature_shift must be >= 0")


@dataclass(frozen=True)
class FLConfig:
    n_clients: int
    rounds: int
    algorithm: AlgorithmSpec = field(default_factory=AlgorithmSpec)
    local: LocalConfig = field(default_factory=LocalConfig)
    data: DataConfig = field(default_factory=DataConfig)
    hidden: tuple[int, ...] = (64, 64)
    seed: int = 0
    workers: int = 1
    snapshot_interval: int = 0
    out_dir: str = "runs/out"

    def __post_init__(self) -> None:
        if self.n_clients < 1:
            raise ConfigError("n_clients must be >= 1")
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.snapshot_interval < 0:
            raise ConfigError("snapshot_interval must be >= 0")
        object.__setattr__(self, "hidden", tuple(self.hidden))

    def replace(self, **changes: Any) -> "FLConfig":
        return dataclasses.replace(self, **changes)

    def with_overrides(self, overrides: Mapping[str, Any]) -> "FLConfig":
        """Apply dotted-key overrides such as ``{"local.alpha": 0.3}``."""
        raw = to_dict(self)
        for key, value in overrides.items():
            node = raw
            *parents, leaf = key.split(".")
            for part in parents:
                if not isinstance(node.get(part), dict):
                    raise ConfigError(f"unknown config section in {key!r}")
                node = node[part]
            if leaf not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[leaf] = value
        return from_dict(raw)


_SECTIONS = {"algorithm": AlgorithmSpec, "local": LocalConfig, "data": DataConfig}
_REQUIRED = ("n_clients", "rounds")


def _build(cls: type, raw: Mapping[str, Any], where: str) -> Any:
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def from_dict(raw: Mapping[str, Any]) -> FLConfig:
    raw = dict(raw)
    missing = [k for k in _REQUIRED if k not in raw]
    if "algorithm" not in raw or "kind" not in raw.get("algorithm", {}):
        missing.append("algorithm.kind")
    if missing:
        raise ConfigError(f"missing required field(s): {', '.join(missing)}")
    for name, cls in _SECTIONS.items():
        section = raw.get(name, {})
        if not isinstance(section, Mapping):
            raise ConfigError(f"[{name}] must be a table")
        raw[name] = _build(cls, section, f"[{name}]")
    return _build(FLConfig, raw, "top level")


def to_dict(cfg: FLConfig) -> dict[str, Any]:
    out = dataclasses.asdict(cfg)
    out["hidden"] = list(cfg.hidden)
    return out


def load_config(path: str | Path) -> FLConfig:
    try:
        with Path(path).open("rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(raw)


def load_sweep(path: str | Path) -> dict[str, list[Any]]:
    """Read a ``[sweep]`` table mapping dotted config keys to value lists."""
    try:
        with Path(path).open("rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read sweep {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    sweep = raw.get("sweep")
    if not isinstance(sweep, dict) or not sweep:
        raise ConfigError(f"{path}: needs a non-empty [sweep] table")
    flat: dict[str, list[Any]] = {}

    def walk(prefix: str, node: Mapping[str, Any]) -> None:
        for key, value in node.items():
            name = f"{prefix}{key}"
            if isinstance(value, dict):
                walk(name + ".", value)
            elif isinstance(value, list) and value:
                flat[name] = value
            else:
                raise ConfigError(f"sweep entry {name!r} must be a non-empty list")

    walk("", sweep)
    return flat
