"""Pipeline configuration shared by the library entry points and the CLI."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .ldi import DEFAULT_DILATION, DEFAULT_TAU, MIN_EDGE_LENGTH

FOOTPRINTS = ("nearest", "bilinear")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    tau: float = DEFAULT_TAU
    dilation: int = DEFAULT_DILATION
    min_edge_length: int = MIN_EDGE_LENGTH
    patch_size: int = 7
    footprint: str = "nearest"
    width: int | None = None  # output size; None keeps the input size
    height: int | None = None
    workers: int = 1
    diffusion_tol: float = 1e-4
    diffusion_max_iter: int = 2000

    def __post_init__(self):
        if not self.tau > 1:
            raise ConfigError("tau must be greater than 1")
        if self.dilation < 1:
            raise ConfigError("dilation must be at least 1")
        if self.min_edge_length < 1:
            raise ConfigError("min_edge_length must be at least 1")
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ConfigError("patch_size must be a positive odd number")
        if self.footprint not in FOOTPRINTS:
            raise ConfigError(f"footprint must be one of {FOOTPRINTS}")
        if (self.width is None) != (self.height is None):
            raise ConfigError("width and height must be given together")
        if self.width is not None and (self.height <= 0 or self.width != 2 * self.height):
            raise ConfigError("output size must be 2:1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> Config:
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> Config:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def replace(self, **overrides) -> Config:
        doc = self.to_dict()
        doc.update({k: v for k, v in overrides.items() if v is not None})
        return Config.from_dict(doc)
