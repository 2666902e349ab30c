"""Run configuration: dimensions, fusion mode, optimizer settings, seeds.

Defaults follow the training recipe where one is stated (3 epochs, lr
3e-5 with cosine decay, 4 attention heads in the token-wise block, temp
initialized to 1e-2, base_temp 1e2 with scaling factor 1e5) and the
documented design decisions elsewhere. Config files are flat
``key = value`` lines with ``#`` comments; explicit overrides win over
the file, which wins over defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError

FUSION_MODES = ("last", "global", "tokenwise")


@dataclass
class RunConfig:
    L: int = 8                  # encoder blocks
    d: int = 16                 # encoder width
    d_prime: int = 32           # decoder width
    V: int = 64                 # vocabulary size
    max_T: int = 32             # maximum source length
    heads: int = 4              # token-wise fusion block heads
    fusion_mode: str = "global"
    base_temp: float = 100.0
    factor: float = 1e5
    temp_init: float = 1e-2
    tau_override: Optional[float] = None   # alternate reading: fixed temperature
    include_embedding_layer: bool = False
    loss_reduction: str = "mean"
    epochs: int = 3
    lr_base: float = 3e-5
    batch: int = 8
    seed: int = 0
    precision: str = "f32"
    grad_clip: Optional[float] = None

    def validate(self) -> "RunConfig":
        for name in ("L", "d", "d_prime", "V", "max_T", "heads", "batch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"fusion_mode must be one of {FUSION_MODES}, got {self.fusion_mode!r}")
        if self.loss_reduction not in ("mean", "sum"):
            raise ConfigError(f"loss_reduction must be mean or sum, got {self.loss_reduction!r}")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")
        if self.d % self.heads != 0:
            raise ConfigError(f"d={self.d} not divisible by heads={self.heads}")
        if self.d % 2 != 0:
            raise ConfigError(f"d={self.d} not divisible by the encoder's 2 heads")
        if self.d_prime % 4 != 0:
            raise ConfigError(f"d_prime={self.d_prime} not divisible by the decoder's 4 heads")
        if self.base_temp <= 0 or self.factor <= 0:
            raise ConfigError("base_temp and factor must be positive")
        if self.lr_base <= 0:
            raise ConfigError(f"lr_base must be positive, got {self.lr_base}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be positive, got {self.grad_clip}")
        return self

    @property
    def np_dtype(self):
        return np.float64 if self.precision == "f64" else np.float32

    @property
    def fused_layers(self) -> int:
        return self.L + 1 if self.include_embedding_layer else self.L

    def echo(self) -> str:
        return "\n".join(f"{f.name} = {getattr(self, f.name)}" for f in dataclasses.fields(self))


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_INT_FIELDS = {n for n, f in _FIELDS.items() if f.type in ("int",)}
_FLOAT_FIELDS = {n for n, f in _FIELDS.items() if f.type in ("float",)}
_OPT_FLOAT_FIELDS = {n for n, f in _FIELDS.items() if "Optional[float]" in str(f.type)}
_BOOL_FIELDS = {n for n, f in _FIELDS.items() if f.type in ("bool",)}


def coerce_value(name: str, text: str):
    if name not in _FIELDS:
        raise ConfigError(f"unknown config key {name!r}")
    text = text.strip()
    try:
        if name in _BOOL_FIELDS:
            if text.lower() in ("true", "1", "yes", "on"):
                return True
            if text.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if name in _INT_FIELDS:
            return int(text)
        if name in _OPT_FLOAT_FIELDS:
            return None if text.lower() in ("none", "null", "") else float(text)
        if name in _FLOAT_FIELDS:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {text!r}") from exc


def parse_config_file(path) -> dict:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, text = line.split("=", 1)
            values[key.strip()] = coerce_value(key.strip(), text)
    return values


def build_config(file_path=None, overrides: dict | None = None) -> RunConfig:
    """defaults <- config file <- explicit overrides, then validate."""
    values: dict = {}
    if file_path is not None:
        values.update(parse_config_file(file_path))
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = val
    return RunConfig(**values).validate()
