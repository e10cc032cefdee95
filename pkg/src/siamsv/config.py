"""Run configuration: one JSON document per run, schema-versioned.

Sections and defaults (all keys optional unless a command needs them):

  schema_version   must be 1
  paths            manifest, noise_list, rir_list, trials, labels, run_dir
  encoder          variant ("tiny"|"thin_resnet34"), embedding_dim,
                   attention_dim (null = per-variant default)
  heads            projection_hidden, reg_bottleneck (null = derived from
                   embedding_dim: hidden = dim, bottleneck = dim // 4)
  train            batch_utterances, total_steps, lr_initial, lr_final,
                   momentum, lambda (SSReg weight), seed, strategy (1-6),
                   segment_s, checkpoint_every, log_ops
  augment          snr_db_range, speed_factors, reverb_prob, noise_prob,
                   speed_prob, specaug_prob
  specaug          max_freq_mask_bins, max_time_mask_frames, num_freq_masks,
                   num_time_masks

Unknown keys anywhere are rejected. ``--set section.key=value`` overrides
individual fields.
"""

import dataclasses
import json
from dataclasses import dataclass, replace

from .augment import AugmentationPolicy, strategy_policy
from .features import SpecAugPolicy
from .model import EncoderConfig, HeadConfig
from .trainer import TrainConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Raised for malformed run configuration documents."""


@dataclass(frozen=True)
class PathsConfig:
    manifest: str = ""
    noise_list: str = ""
    rir_list: str = ""
    trials: str = ""
    labels: str = ""
    run_dir: str = "run"


@dataclass(frozen=True)
class HeadSection:
    projection_hidden: int | None = None
    reg_bottleneck: int | None = None


@dataclass(frozen=True)
class AugmentSection:
    snr_db_range: tuple[float, float] = (3.0, 15.0)
    speed_factors: tuple[float, ...] = (0.9, 1.0, 1.1)
    reverb_prob: float = 1.0
    noise_prob: float = 1.0
    speed_prob: float = 0.5
    specaug_prob: float = 0.5


@dataclass(frozen=True)
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    paths: PathsConfig = PathsConfig()
    encoder: EncoderConfig = EncoderConfig(variant="tiny", embedding_dim=128)
    heads: HeadSection = HeadSection()
    train: TrainConfig = TrainConfig()
    augment: AugmentSection = AugmentSection()
    specaug: SpecAugPolicy = SpecAugPolicy()

    def head_config(self) -> HeadConfig | None:
        if self.heads.projection_hidden is None and self.heads.reg_bottleneck is None:
            return None
        dim = self.encoder.embedding_dim
        return HeadConfig(
            embedding_dim=dim,
            projection_hidden=self.heads.projection_hidden or dim,
            reg_bottleneck=self.heads.reg_bottleneck or max(dim // 4, 4),
        )

    def augmentation_policy(self) -> AugmentationPolicy:
        base = strategy_policy(self.train.strategy)
        return replace(
            base,
            snr_db_range=tuple(self.augment.snr_db_range),
            speed_factors=tuple(self.augment.speed_factors),
            reverb_prob=self.augment.reverb_prob,
            noise_prob=self.augment.noise_prob,
            speed_prob=self.augment.speed_prob,
            specaug_prob=self.augment.specaug_prob,
        )


_SECTION_TYPES = {
    "paths": PathsConfig,
    "encoder": EncoderConfig,
    "heads": HeadSection,
    "train": TrainConfig,
    "augment": AugmentSection,
    "specaug": SpecAugPolicy,
}

# external configs use the objective's published name for the SSReg weight
_TRAIN_KEY_ALIASES = {"lambda": "ssreg_weight"}

_TUPLE_FIELDS = {"snr_db_range", "speed_factors"}


def _build_section(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in dataclasses.fields(cls)}
    cleaned = {}
    for key, value in data.items():
        name = _TRAIN_KEY_ALIASES.get(key, key) if cls is TrainConfig else key
        if name not in known:
            raise ConfigError(f"{where}: unknown key {key!r}")
        if name in cleaned:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        if name in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        cleaned[name] = value
    try:
        return cls(**cleaned)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}; expected {SCHEMA_VERSION}")
    sections = {}
    for key, value in data.items():
        if key == "schema_version":
            continue
        if key not in _SECTION_TYPES:
            raise ConfigError(f"unknown config section {key!r}")
        sections[key] = _build_section(_SECTION_TYPES[key], value, key)
    return RunConfig(schema_version=SCHEMA_VERSION, **sections)


def load_config(path: str, overrides: list[str] = ()) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    for item in overrides:
        data = apply_override(data, item)
    return config_from_dict(data)


def apply_override(data: dict, item: str) -> dict:
    """Apply one ``section.key=value`` override; value parsed as JSON when possible."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    dotted, _, raw = item.partition("=")
    keys = dotted.split(".")
    if len(keys) != 2:
        raise ConfigError(f"override {item!r} must target section.key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    section, key = keys
    out = dict(data)
    out[section] = dict(out.get(section, {}))
    out[section][key] = value
    return out


def config_to_dict(config: RunConfig) -> dict:
    data = dataclasses.asdict(config)
    train = data["train"]
    train["lambda"] = train.pop("ssreg_weight")
    for name in _TUPLE_FIELDS:
        if name in data["augment"]:
            data["augment"][name] = list(data["augment"][name])
    return data


def save_config(path: str, config: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")
