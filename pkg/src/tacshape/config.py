"""Experiment configuration: plain-text key=value files with [section] headers.

Every key has a default (the dataclass field defaults below are the
documentation of record, mirrored in the README); unknown sections or keys
are errors. `config_hash` fingerprints the fully resolved configuration for
run manifests.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

from .chartnet import ChartConfig, ChartTrainConfig
from .decoder import DecoderConfig, InferenceConfig, SdfTrainConfig
from .errors import ConfigError
from .touch import SensorSpec


@dataclass
class CorpusConfig:
    families: tuple[str, ...] = ("sphere", "box", "cylinder", "capsule",
                                 "box_sphere_union", "box_minus_sphere")
    count: int = 32
    tessellation: int = 3
    seed: int = 0
    n_train: int = 24
    n_val: int = 4
    n_test: int = 4


@dataclass
class TouchDataConfig:
    touches_per_shape: int = 40
    cloud_points: int = 256
    max_retries: int = 20
    seed: int = 0


@dataclass
class SdfDataConfig:
    n_surface: int = 5000
    n_uniform: int = 2500
    sigma_near: float = 0.05
    seed: int = 0


@dataclass
class McConfig:
    resolution: int = 128
    half_extent: float = 1.1


@dataclass
class EvalConfig:
    n_points: int = 4096
    seed: int = 0


@dataclass
class ExperimentPlan:
    touch_counts: tuple[int, ...] = (1, 10, 20)
    seeds_per_shape: int = 5
    master_seed: int = 0


@dataclass
class ExperimentConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    sensor: SensorSpec = field(default_factory=SensorSpec)
    touch_data: TouchDataConfig = field(default_factory=TouchDataConfig)
    sdf_data: SdfDataConfig = field(default_factory=SdfDataConfig)
    chart: ChartConfig = field(default_factory=ChartConfig)
    chart_train: ChartTrainConfig = field(default_factory=ChartTrainConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    decoder_train: SdfTrainConfig = field(default_factory=SdfTrainConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    mc: McConfig = field(default_factory=McConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    experiment: ExperimentPlan = field(default_factory=ExperimentPlan)

    def validate(self) -> None:
        c = self.corpus
        if c.count < 1:
            raise ConfigError("corpus.count must be >= 1")
        if c.n_train + c.n_val + c.n_test > c.count:
            raise ConfigError("corpus split exceeds corpus.count")
        if not c.families:
            raise ConfigError("corpus.families must be non-empty")
        tc = self.experiment.touch_counts
        if any(b <= a for a, b in zip(tc, tc[1:])) or not tc:
            raise ConfigError("experiment.touch_counts must be strictly increasing")
        if min(tc) < 1:
            raise ConfigError("experiment.touch_counts must be >= 1")
        if self.touch_data.touches_per_shape < 1:
            raise ConfigError("touch_data.touches_per_shape must be >= 1")
        # SensorSpec validates in its own __post_init__ on construction


_SECTIONS = {
    "corpus": "corpus",
    "sensor": "sensor",
    "touch_data": "touch_data",
    "sdf_data": "sdf_data",
    "chart": "chart",
    "chart_train": "chart_train",
    "decoder": "decoder",
    "decoder_train": "decoder_train",
    "inference": "inference",
    "mc": "mc",
    "eval": "eval",
    "experiment": "experiment",
}


def _parse_value(raw: str, kind):
    raw = raw.strip()
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind is bool:
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind is str:
        return raw
    origin = getattr(kind, "__origin__", None)
    if origin is tuple:
        inner = kind.__args__[0]
        items = [x.strip() for x in raw.split(",") if x.strip()]
        return tuple(_parse_value(x, inner) for x in items)
    raise ValueError(f"unsupported config field type {kind}")


def load_config(path: str | Path | None = None) -> ExperimentConfig:
    """Defaults overlaid with an optional key=value file; strict keys."""
    cfg = ExperimentConfig()
    if path is None:
        cfg.validate()
        return cfg
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    hints = {
        "corpus": CorpusConfig, "sensor": SensorSpec, "touch_data": TouchDataConfig,
        "sdf_data": SdfDataConfig, "chart": ChartConfig, "chart_train": ChartTrainConfig,
        "decoder": DecoderConfig, "decoder_train": SdfTrainConfig,
        "inference": InferenceConfig, "mc": McConfig, "eval": EvalConfig,
        "experiment": ExperimentPlan,
    }
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        cls = hints[section]
        valid = {f.name: f.type for f in fields(cls)}
        resolved = _resolve_types(cls)
        overrides = {}
        for key, raw in parser.items(section):
            if key not in valid:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            try:
                overrides[key] = _parse_value(raw, resolved[key])
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
        current = getattr(cfg, _SECTIONS[section])
        merged = {f.name: getattr(current, f.name) for f in fields(cls)}
        merged.update(overrides)
        setattr(cfg, _SECTIONS[section], cls(**merged))
    cfg.validate()
    return cfg


def _resolve_types(cls) -> dict:
    import typing

    return typing.get_type_hints(cls)


def dump_config(cfg: ExperimentConfig) -> str:
    """Canonical key=value rendering of the full, resolved configuration."""
    lines = []
    for section, attr in _SECTIONS.items():
        obj = getattr(cfg, attr)
        lines.append(f"[{section}]")
        for f in fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode("utf-8")).hexdigest()[:16]
