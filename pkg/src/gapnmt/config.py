"""Key=value experiment configuration files.

One `key=value` per line; blank lines and `#` comments are skipped.
Unknown keys are rejected so typos fail fast, with one exception: the
reserved `artifact.` namespace, which pipeline manifests use to record
outputs. A manifest is therefore itself a valid configuration file, and
rerunning it reproduces the run.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .augmentation import AugmentationStrategy, PipelineConfig
from .trainer import TrainConfig

TRAINER_KEYS = (
    "d_lstm", "d_dec", "embed_dim", "learning_rate", "clip_norm",
    "batch_size", "patience", "max_epochs",
)
BASE_KEYS = (
    "corpus", "out", "seed", "pivot", "helper", "target", "sources",
    "strategy", "iterations", "split", "merges_pivot", "merges_shared",
)
STAGE_PREFIXES = ("filler", "final")


def known_keys() -> set[str]:
    keys = set(BASE_KEYS) | set(TRAINER_KEYS)
    for prefix in STAGE_PREFIXES:
        keys |= {f"{prefix}.{k}" for k in TRAINER_KEYS}
    return keys


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    values: dict[str, str]

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        values: dict[str, str] = {}
        valid = known_keys()
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}: line {lineno}: expected key=value")
                key, value = line.split("=", 1)
                if key.startswith("artifact."):
                    continue
                if key not in valid:
                    raise ConfigError(f"{path}: line {lineno}: unknown key {key!r}")
                if key in values:
                    raise ConfigError(f"{path}: line {lineno}: duplicate key {key!r}")
                values[key] = value
        return cls(values)

    def get(self, key: str, default: str | None = None) -> str | None:
        return self.values.get(key, default)

    def require(self, *keys: str) -> None:
        missing = [k for k in keys if k not in self.values]
        if missing:
            raise ConfigError(f"missing required config keys: {', '.join(missing)}")

    def get_int(self, key: str, default: int) -> int:
        raw = self.values.get(key)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"config key {key!r}: expected integer, got {raw!r}")

    def get_float(self, key: str, default: float) -> float:
        raw = self.values.get(key)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"config key {key!r}: expected number, got {raw!r}")


def split_fractions_from(config: ExperimentConfig) -> tuple[float, float, float]:
    raw = config.get("split", "0.8,0.1,0.1")
    parts = raw.split(",")
    if len(parts) != 3:
        raise ConfigError(f"split must be three comma-separated fractions: {raw!r}")
    try:
        return tuple(float(p) for p in parts)  # type: ignore[return-value]
    except ValueError:
        raise ConfigError(f"split must be numeric fractions: {raw!r}")


def train_config_from(
    config: ExperimentConfig, stage: str | None, seed: int
) -> TrainConfig:
    """Build a TrainConfig from base keys plus optional stage overrides."""
    defaults = {f.name: f.default for f in fields(TrainConfig)}

    def lookup(key: str) -> str | None:
        if stage is not None:
            staged = config.get(f"{stage}.{key}")
            if staged is not None:
                return staged
        return config.get(key)

    kwargs: dict = {}
    for key in TRAINER_KEYS:
        raw = lookup(key)
        if raw is None:
            continue
        if key in ("learning_rate", "clip_norm"):
            kwargs[key] = float(raw)
        else:
            kwargs[key] = int(raw)
    if "d_lstm" in kwargs and "d_dec" not in kwargs:
        kwargs["d_dec"] = 2 * kwargs["d_lstm"]
    for key in TRAINER_KEYS:
        kwargs.setdefault(key, defaults[key])
    return TrainConfig(seed=seed, **kwargs)


def pipeline_config_from(config: ExperimentConfig, seed: int) -> PipelineConfig:
    config.require("pivot", "helper", "target")
    strategy = AugmentationStrategy.parse(config.get("strategy", "fill_in"))
    return PipelineConfig(
        pivot=config.get("pivot"),
        helper=config.get("helper"),
        target=config.get("target"),
        strategy=strategy,
        filler_train=train_config_from(config, "filler", seed=0),
        final_train=train_config_from(config, "final", seed=0),
        iterations=config.get_int("iterations", 1),
        split_fractions=split_fractions_from(config),
        merges_pivot=config.get_int("merges_pivot", 500),
        merges_shared=config.get_int("merges_shared", 500),
        seed=seed,
    )
