"""Declarative hyperparameter spaces and their encodings.

Two encodings live here: the unit-cube codec used for sampling (one scalar
in [0, 1] per dimension, floats quantized to 6 significant digits on decode
so configs survive an encode/decode round trip), and the surrogate feature
encoding (scaled scalars for numeric dimensions, one-hot for categoricals).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import BlockConfig, QuartzConfig


def _quantize(x: float) -> float:
    return float(f"{x:.6g}")


@dataclass(frozen=True)
class FloatDim:
    name: str
    low: float
    high: float
    log: bool = False

    def validate(self) -> None:
        if self.low > self.high:
            raise ConfigError(f"dimension {self.name}: low {self.low} > high {self.high}")
        if self.log and self.low <= 0:
            raise ConfigError(f"log dimension {self.name} must be strictly positive")

    def decode(self, u: float) -> float:
        if self.low == self.high:
            return self.low
        if self.log:
            lo, hi = math.log(self.low), math.log(self.high)
            raw = math.exp(lo + u * (hi - lo))
        else:
            raw = self.low + u * (self.high - self.low)
        # quantization may nudge the value past a bound; clamp back
        return min(max(_quantize(raw), self.low), self.high)

    def encode(self, v: float) -> float:
        if self.low == self.high:
            return 0.0
        if self.log:
            lo, hi = math.log(self.low), math.log(self.high)
            return (math.log(v) - lo) / (hi - lo)
        return (v - self.low) / (self.high - self.low)

    def contains(self, v) -> bool:
        return isinstance(v, (int, float)) and self.low <= v <= self.high


@dataclass(frozen=True)
class IntDim:
    name: str
    low: int
    high: int

    def validate(self) -> None:
        if self.low > self.high:
            raise ConfigError(f"dimension {self.name}: low {self.low} > high {self.high}")

    def decode(self, u: float) -> int:
        span = self.high - self.low + 1
        return self.low + min(int(u * span), span - 1)

    def encode(self, v: int) -> float:
        span = self.high - self.low + 1
        return (v - self.low + 0.5) / span

    def contains(self, v) -> bool:
        return isinstance(v, (int, np.integer)) and self.low <= v <= self.high


@dataclass(frozen=True)
class CatDim:
    name: str
    choices: tuple

    def validate(self) -> None:
        if not self.choices:
            raise ConfigError(f"dimension {self.name}: categorical choices must be nonempty")

    def decode(self, u: float):
        n = len(self.choices)
        return self.choices[min(int(u * n), n - 1)]

    def encode(self, v) -> float:
        return (self.choices.index(v) + 0.5) / len(self.choices)

    def contains(self, v) -> bool:
        return v in self.choices


Dimension = FloatDim | IntDim | CatDim


class ParamSpace:
    def __init__(self, dims: list[Dimension], defaults: dict | None = None) -> None:
        names = [d.name for d in dims]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate dimension names: {names}")
        for d in dims:
            d.validate()
        self.dims = list(dims)
        self.defaults = dict(defaults) if defaults else None
        if self.defaults is not None and not self.contains(self.defaults):
            raise ConfigError(f"space defaults {self.defaults} lie outside the space")

    def __len__(self) -> int:
        return len(self.dims)

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    def is_single_point(self) -> bool:
        for d in self.dims:
            if isinstance(d, FloatDim) and d.low != d.high:
                return False
            if isinstance(d, IntDim) and d.low != d.high:
                return False
            if isinstance(d, CatDim) and len(d.choices) > 1:
                return False
        return True

    def decode_unit(self, u: np.ndarray) -> dict:
        return {d.name: d.decode(float(u[i])) for i, d in enumerate(self.dims)}

    def encode_unit(self, config: dict) -> np.ndarray:
        return np.array([d.encode(config[d.name]) for d in self.dims], dtype=np.float64)

    def sample(self, rng: np.random.Generator) -> dict:
        return self.decode_unit(rng.random(len(self.dims)))

    def contains(self, config: dict) -> bool:
        if set(config) != set(self.names):
            return False
        return all(d.contains(config[d.name]) for d in self.dims)

    # surrogate features: numeric dims as one scaled scalar, categoricals one-hot
    @property
    def feature_dim(self) -> int:
        return sum(len(d.choices) if isinstance(d, CatDim) else 1 for d in self.dims)

    def features(self, config: dict) -> np.ndarray:
        parts: list[float] = []
        for d in self.dims:
            v = config[d.name]
            if isinstance(d, CatDim):
                onehot = [0.0] * len(d.choices)
                onehot[d.choices.index(v)] = 1.0
                parts.extend(onehot)
            else:
                parts.append(d.encode(v))
        return np.array(parts, dtype=np.float64)

    def to_dict(self) -> dict:
        dims = []
        for d in self.dims:
            if isinstance(d, FloatDim):
                kind = "continuous-log" if d.log else "continuous-linear"
                dims.append({"name": d.name, "kind": kind, "low": d.low, "high": d.high})
            elif isinstance(d, IntDim):
                dims.append({"name": d.name, "kind": "integer", "low": d.low, "high": d.high})
            else:
                dims.append({"name": d.name, "kind": "categorical", "choices": list(d.choices)})
        return {"dimensions": dims, "defaults": self.defaults}

    @classmethod
    def from_dict(cls, d: dict) -> "ParamSpace":
        dims: list[Dimension] = []
        try:
            for entry in d["dimensions"]:
                kind = entry["kind"]
                if kind in ("continuous-log", "continuous-linear"):
                    dims.append(
                        FloatDim(entry["name"], entry["low"], entry["high"],
                                 log=(kind == "continuous-log"))
                    )
                elif kind == "integer":
                    dims.append(IntDim(entry["name"], entry["low"], entry["high"]))
                elif kind == "categorical":
                    dims.append(CatDim(entry["name"], tuple(entry["choices"])))
                else:
                    raise ConfigError(f"unknown dimension kind {kind!r}")
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed space definition: {exc}") from exc
        return cls(dims, d.get("defaults"))

    @classmethod
    def load(cls, path: str | Path) -> "ParamSpace":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read space file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: space file is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)


def default_space(in_channels: int) -> ParamSpace:
    """The stock 8-dimensional space: optimizer knobs plus architecture knobs.

    Block kernels grow with depth as kernel_base + 2*i; all blocks share
    base_channels and the head doubles it.
    """
    dims: list[Dimension] = [
        FloatDim("lr", 1e-4, 1e-2, log=True),
        FloatDim("weight_decay", 1e-6, 1e-2, log=True),
        FloatDim("dropout", 0.0, 0.5),
        CatDim("batch_size", (32, 64, 128, 256)),
        IntDim("num_blocks", 2, 5),
        IntDim("cells_per_block", 1, 3),
        CatDim("base_channels", (32, 64, 128)),
        CatDim("kernel_base", (3, 5, 7)),
    ]
    defaults = {
        "lr": 1e-3,
        "weight_decay": 1e-4,
        "dropout": 0.1,
        "batch_size": 64,
        "num_blocks": 3,
        "cells_per_block": 2,
        "base_channels": 64,
        "kernel_base": 5,
    }
    return ParamSpace(dims, defaults)


def config_to_model(config: dict, in_channels: int, num_classes: int) -> QuartzConfig:
    """Materialize the architecture dimensions of a trial config."""
    blocks = [
        BlockConfig(
            cells=int(config["cells_per_block"]),
            channels=int(config["base_channels"]),
            kernel=int(config["kernel_base"]) + 2 * i,
        )
        for i in range(int(config["num_blocks"]))
    ]
    return QuartzConfig(
        in_channels=in_channels,
        num_classes=num_classes,
        blocks=blocks,
        head_channels=2 * int(config["base_channels"]),
        dropout=float(config["dropout"]),
        stem_kernel=int(config["kernel_base"]),
    ).validate()


def config_to_train(config: dict, epochs: int, seed: int) -> "TrainConfig":
    from .trainer import TrainConfig

    return TrainConfig(
        epochs=epochs,
        batch_size=int(config["batch_size"]),
        learning_rate=float(config["lr"]),
        weight_decay=float(config["weight_decay"]),
        seed=seed,
    ).validate()
