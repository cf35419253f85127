"""Experiment configuration and the flat ``section.key = value`` text format."""

from __future__ import annotations

import dataclasses
import enum
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .alignment import AlignmentConfig
from .detector.model import DetectorConfig
from .detector.train import TrainConfig
from .metrics import DEFAULT_THRESHOLDS
from .scene_sim.benchmark import BenchmarkConfig
from .scene_sim.world import SimConfig


class ConfigError(ValueError):
    pass


class Mode(str, enum.Enum):
    DT = "DT"
    ST = "ST"
    CL3D = "CL3D"
    ORACLE = "Oracle"


class RangeStrategy(str, enum.Enum):
    NONE = "None"
    RN = "RN"
    RSYM = "RSym"
    RSP = "RSp"


@dataclass
class PipelineConfig:
    mode: Mode = Mode.CL3D
    range_strategy: RangeStrategy = RangeStrategy.RN
    seed: int = 0
    epochs_source: int = 20
    epochs_target: int = 1
    rounds: int = 1
    score_floor: float = 0.2
    # range split: one fan per source frame per epoch, so RSp trains as many steps as the other arms
    split_equal_steps: bool = True


@dataclass
class PrototypeConfig:
    alpha: float = 0.99
    background_weight: float = 0.1
    seed_on_source: bool = True


@dataclass
class EvalConfig:
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    score_floor: float = 0.05
    max_detections: int = 100


@dataclass
class RuntimeConfig:
    workers: int = 0  # 0 = all available cores
    log_level: str = "INFO"


@dataclass
class ExperimentConfig:
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    alignment: AlignmentConfig = field(default_factory=AlignmentConfig)
    prototype: PrototypeConfig = field(default_factory=PrototypeConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)

    def validate(self) -> None:
        self.benchmark.validate()
        p = self.pipeline
        if p.epochs_source < 0 or p.epochs_target < 0 or p.rounds < 1:
            raise ConfigError("epochs must be >= 0 and rounds >= 1")
        if not 0.0 < p.score_floor <= 1.0:
            raise ConfigError("pipeline.score_floor must lie in (0, 1]")
        if not 0.0 <= self.prototype.alpha <= 1.0:
            raise ConfigError("prototype.alpha must lie in [0, 1]")
        if not 0.0 <= self.prototype.background_weight <= 1.0:
            raise ConfigError("prototype.background_weight must lie in [0, 1]")
        if p.mode is Mode.CL3D and self.alignment.use_tma and self.benchmark.sim.frames < 2:
            raise ConfigError("temporal alignment needs consecutive frames")


# -- flat text format -------------------------------------------------------------------------------


def _coerce(raw: str, tp, key: str):
    origin = typing.get_origin(tp)
    try:
        if tp is bool:
            low = raw.strip().lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(tp, type) and issubclass(tp, enum.Enum):
            for member in tp:
                if member.value.lower() == raw.strip().lower():
                    return member
            raise ValueError(f"expected one of {[m.value for m in tp]}")
        if origin is tuple:
            (inner, *_rest) = typing.get_args(tp)
            items = [s for s in raw.replace("(", "").replace(")", "").split(",") if s.strip()]
            return tuple(_coerce(s, inner, key) for s in items)
        if tp in (int, float, str):
            return tp(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"invalid value {raw!r} for {key}: {exc}") from None
    raise ConfigError(f"unsupported field type for {key}")


def _field_types(obj) -> dict:
    return typing.get_type_hints(type(obj))


def set_key(cfg, key: str, raw: str) -> None:
    """Assign ``raw`` (text) to dotted ``key``; unknown keys raise ``ConfigError`` naming the key."""
    parts = key.strip().split(".")
    target = cfg
    for n, part in enumerate(parts):
        if not dataclasses.is_dataclass(target) or part not in {f.name for f in dataclasses.fields(target)}:
            raise ConfigError(f"unknown config key {key!r}")
        if n == len(parts) - 1:
            tp = _field_types(target)[part]
            if dataclasses.is_dataclass(tp):
                raise ConfigError(f"config key {key!r} names a section, not a value")
            setattr(target, part, _coerce(raw, tp, key))
        else:
            target = getattr(target, part)


def parse_lines(text: str) -> list[tuple[str, str]]:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def load_config(path: Path | None = None, overrides: list[str] = ()) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {str(path)!r} not found")
        for key, value in parse_lines(path.read_text()):
            set_key(cfg, key, value)
    apply_overrides(cfg, overrides)
    cfg.validate()
    return cfg


def apply_overrides(cfg, overrides) -> None:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        set_key(cfg, key, value)


def _format(value) -> str:
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def flatten(cfg, prefix: str = "") -> list[tuple[str, str]]:
    out = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            out.extend(flatten(value, key + "."))
        else:
            out.append((key, _format(value)))
    return out


def dump_config(cfg) -> str:
    """Resolved config as text; loading it back reproduces ``cfg`` exactly."""
    return "".join(f"{k} = {v}\n" for k, v in flatten(cfg))


def load_sim_config(path: Path) -> SimConfig:
    """Flat key-value sim config (keys are the SimConfig fields, no section prefix)."""
    cfg = SimConfig()
    for key, value in parse_lines(Path(path).read_text()):
        set_key(cfg, key, value)
    cfg.validate()
    return cfg
