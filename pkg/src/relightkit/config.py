"""Pipeline configuration: nested dataclasses with a JSON round trip."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

from .geometry import BLUR_SIGMA, NOISE_SIGMA, ShadowConfig
from .neural.train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    width: int = 64
    height: int = 64
    focal_ratio: float = 1.0
    n_train: int = 20
    n_test: int = 4
    n_rings: int = 4
    per_ring: int = 20
    noise_sigma: float = NOISE_SIGMA
    blur_sigma: float = BLUR_SIGMA
    rough_min: float = 0.3
    rough_max: float = 1.0
    normal_detail: float = 0.15

    def validate(self):
        if self.width < 8 or self.height < 8:
            raise ConfigError("image must be at least 8x8")
        if self.n_train < 0 or self.n_test < 0 or self.n_train + self.n_test == 0:
            raise ConfigError("need at least one scene")
        if self.n_rings < 0 or self.per_ring < 1:
            raise ConfigError("bad direction grid")
        if not 0.0 < self.rough_min <= self.rough_max <= 1.0:
            raise ConfigError("roughness range must lie in (0, 1]")
        if self.noise_sigma < 0 or self.blur_sigma < 0:
            raise ConfigError("noise parameters must be non-negative")


@dataclass
class BrdfConfig:
    f0: float = 0.05
    cos_eps: float = 1e-4
    flash_intensity: float = math.pi
    light_intensity: float = math.pi

    def validate(self):
        if not 0.0 <= self.f0 <= 1.0:
            raise ConfigError("f0 must be in [0, 1]")
        if self.cos_eps <= 0:
            raise ConfigError("cos_eps must be positive")


@dataclass
class PathsConfig:
    data_dir: str = "data"
    model_dir: str = "models"
    report: str = "report.json"


@dataclass
class PipelineConfig:
    seed: int = 0
    scale: float = 0.25
    data: DataConfig = field(default_factory=DataConfig)
    brdf: BrdfConfig = field(default_factory=BrdfConfig)
    shadow: ShadowConfig = field(default_factory=ShadowConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self):
        if not 0.0 < self.scale <= 1.0:
            raise ConfigError("channel scale must be in (0, 1]")
        self.data.validate()
        self.brdf.validate()
        if self.shadow.resolution_multiplier <= 0 or self.shadow.bias < 0 or self.shadow.splat_radius < 0:
            raise ConfigError("bad shadow config")
        try:
            self.train.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return self

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Copy with every module seed derived from ``seed``."""
        cfg = from_dict(to_dict(self))
        cfg.seed = int(seed)
        cfg.train.seed = int(seed)
        return cfg


def to_dict(cfg: PipelineConfig) -> dict:
    return dataclasses.asdict(cfg)


def _build(cls, d):
    if not isinstance(d, dict):
        raise ConfigError(f"{cls.__name__} section must be an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in d.items():
        f = known[name]
        sub = _SECTIONS.get((cls, name))
        if sub is not None:
            kwargs[name] = _build(sub, value)
        else:
            default = f.default if f.default is not dataclasses.MISSING else None
            if isinstance(default, bool):
                if not isinstance(value, bool):
                    raise ConfigError(f"{cls.__name__}.{name} must be a boolean")
            elif isinstance(default, int) and not isinstance(value, int):
                raise ConfigError(f"{cls.__name__}.{name} must be an integer")
            elif isinstance(default, float):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"{cls.__name__}.{name} must be a number")
                value = float(value)
            kwargs[name] = value
    return cls(**kwargs)


_SECTIONS = {
    (PipelineConfig, "data"): DataConfig,
    (PipelineConfig, "brdf"): BrdfConfig,
    (PipelineConfig, "shadow"): ShadowConfig,
    (PipelineConfig, "train"): TrainConfig,
    (PipelineConfig, "paths"): PathsConfig,
}


def from_dict(d: dict) -> PipelineConfig:
    return _build(PipelineConfig, d)


def dumps(cfg: PipelineConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n"


def loads(text: str) -> PipelineConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    return from_dict(d).validate()


def load(path) -> PipelineConfig:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def save(cfg: PipelineConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(cfg))
