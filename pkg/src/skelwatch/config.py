"""Run configuration: INI-style ``key = value`` sections plus overrides.

Sections map onto the dataclasses that own the knobs::

    [run]       seed, deterministic
    [features]  scale_mode, reference_halfspine, clip_len
    [split]     mode, train_ids
    [train]     TrainConfig fields
    [stream]    StreamConfig fields
    [synth]     SynthSpec fields plus stream splicing knobs

``dump()`` writes the effective configuration in the same format, so the
printed block can be fed back through ``--config``.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from typing import Optional

from .dataset import SplitSpec, SynthSpec
from .indrnn import TrainConfig
from .skeleton import CLIP_LEN, DEFAULT_REFERENCE_HALFSPINE, SCALE_MODES
from .streaming import StreamConfig


class ConfigError(ValueError):
    pass


@dataclass
class FeatureConfig:
    scale_mode: str = "reference-normalized"
    reference_halfspine: float = DEFAULT_REFERENCE_HALFSPINE
    clip_len: int = CLIP_LEN

    def __post_init__(self):
        if self.scale_mode not in SCALE_MODES:
            raise ValueError(f"scale_mode must be one of {SCALE_MODES}")
        if not self.reference_halfspine > 0:
            raise ValueError("reference_halfspine must be positive")
        if self.clip_len < 1:
            raise ValueError("clip_len must be positive")


@dataclass
class SplitConfig:
    mode: str = "cross-subject"
    train_ids: str = ""  # comma-separated; empty means the protocol default

    def spec(self) -> SplitSpec:
        ids = None
        if self.train_ids.strip():
            try:
                ids = frozenset(int(v) for v in self.train_ids.split(","))
            except ValueError:
                raise ConfigError(f"split.train_ids must be comma-separated integers, got {self.train_ids!r}")
        return SplitSpec(self.mode, ids)


@dataclass
class SynthConfig:
    num_classes: int = 3
    clips_per_class: int = 200
    frames_per_clip: int = 100
    noise_stddev: float = 0.01
    seed: int = 0
    train_subjects: int = 8          # subjects 1..N train, the rest (of 10) test
    stream_instances: int = 5
    instance_len: int = 250
    gap_min: int = 250
    gap_max: int = 400

    def spec(self) -> SynthSpec:
        return SynthSpec(self.num_classes, self.clips_per_class, self.frames_per_clip,
                         self.noise_stddev, self.seed)


@dataclass
class RunSection:
    seed: int = 0
    deterministic: bool = False


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    stream: StreamConfig = field(default_factory=StreamConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    SECTIONS = ("run", "features", "split", "train", "stream", "synth")

    def stream_config(self) -> StreamConfig:
        """Stream settings with feature extraction aligned to ``[features]``."""
        return dataclasses.replace(self.stream, scale_mode=self.features.scale_mode,
                                   reference_halfspine=self.features.reference_halfspine)

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, clip_len=self.features.clip_len)


def _coerce(kind, raw: str, where: str):
    raw = raw.strip()
    try:
        if kind is bool or kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int or kind == "int":
            return int(raw)
        if kind is float or kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {getattr(kind, '__name__', kind)}") from None
    return raw


def _field_types(obj) -> dict:
    return {f.name: (f.type if not isinstance(f.type, type) else f.type.__name__) for f in dataclasses.fields(obj)}


def apply_settings(cfg: RunConfig, settings: dict) -> RunConfig:
    """Apply ``{"section.key": "value"}`` overrides, validating every value."""
    grouped: dict = {}
    for dotted, value in settings.items():
        section, _, key = dotted.partition(".")
        if section not in RunConfig.SECTIONS or not key:
            raise ConfigError(f"unknown setting {dotted!r}")
        grouped.setdefault(section, {})[key] = value
    for section, values in grouped.items():
        current = getattr(cfg, section)
        types = _field_types(current)
        updates = {}
        for key, value in values.items():
            if key not in types:
                raise ConfigError(f"unknown setting {section}.{key}")
            updates[key] = _coerce(types[key], str(value), f"{section}.{key}") if isinstance(value, str) else value
        try:
            setattr(cfg, section, dataclasses.replace(current, **updates))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}] {exc}") from None
    return cfg


def load(path: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    cfg = RunConfig()
    if path:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        settings = {f"{s}.{k}": v for s in parser.sections() for k, v in parser.items(s)}
        apply_settings(cfg, settings)
    if overrides:
        apply_settings(cfg, overrides)
    return cfg


def dump(cfg: RunConfig) -> str:
    lines = []
    for section in RunConfig.SECTIONS:
        obj = getattr(cfg, section)
        lines.append(f"[{section}]")
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v!r}" if isinstance(v, float) else f"{f.name} = {v}")
        lines.append("")
    return "\n".join(lines)
