"""Dataset schemas: channel declarations, labels, windowing and split policy.

A schema is authored by the user as `schema.json` and travels with the data
through every pipeline stage, ending up embedded in the binary container.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigError

NORMALIZATION_MODES = ("zscore", "minmax", "none")
AUGMENTATION_KINDS = ("jitter", "scale", "oversample")
AUGMENTATION_TARGETS = ("all", "minority-classes")


@dataclass
class ChannelSpec:
    name: str
    modality: str = "generic"
    unit: str = ""


@dataclass
class AugmentationSpec:
    kind: str
    magnitude: float
    target: str = "all"
    ratio: float = 0.5  # oversample only: minimum class count as a fraction of the largest

    def validate(self) -> "AugmentationSpec":
        if self.kind not in AUGMENTATION_KINDS:
            raise ConfigError(f"unknown augmentation kind {self.kind!r}; expected {AUGMENTATION_KINDS}")
        if self.target not in AUGMENTATION_TARGETS:
            raise ConfigError(
                f"augmentation target {self.target!r} rejected; expected {AUGMENTATION_TARGETS}"
            )
        if self.magnitude < 0:
            raise ConfigError(f"augmentation magnitude must be >= 0, got {self.magnitude}")
        if not 0.0 < self.ratio <= 1.0:
            raise ConfigError(f"oversample ratio must be in (0, 1], got {self.ratio}")
        return self


@dataclass
class DatasetSchema:
    name: str
    channels: list[ChannelSpec]
    sampling_rate: float
    label_names: list[str]
    window_length: int
    window_stride: int
    split_ratio: float = 0.8
    normalization: str = "zscore"
    augmentation: list[AugmentationSpec] = field(default_factory=list)

    def validate(self) -> "DatasetSchema":
        if not self.channels:
            raise ConfigError("schema must declare at least one channel")
        names = [c.name for c in self.channels]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate channel names in schema: {names}")
        if not self.label_names:
            raise ConfigError("label_names must be nonempty")
        if len(set(self.label_names)) != len(self.label_names):
            raise ConfigError(f"label_names must be unique: {self.label_names}")
        if self.sampling_rate <= 0:
            raise ConfigError(f"sampling_rate must be positive, got {self.sampling_rate}")
        if self.window_length < 1:
            raise ConfigError(f"window_length must be >= 1, got {self.window_length}")
        if not 1 <= self.window_stride <= self.window_length:
            raise ConfigError(
                f"window_stride must satisfy 1 <= stride <= window_length, "
                f"got stride={self.window_stride} length={self.window_length}"
            )
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError(f"split_ratio must be in (0, 1), got {self.split_ratio}")
        if self.normalization not in NORMALIZATION_MODES:
            raise ConfigError(
                f"unknown normalization {self.normalization!r}; expected {NORMALIZATION_MODES}"
            )
        for spec in self.augmentation:
            spec.validate()
        return self

    @property
    def num_channels(self) -> int:
        return len(self.channels)

    @property
    def num_classes(self) -> int:
        return len(self.label_names)

    def label_index(self, name: str) -> int:
        try:
            return self.label_names.index(name)
        except ValueError:
            raise ConfigError(f"label {name!r} not in schema labels {self.label_names}") from None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSchema":
        try:
            schema = cls(
                name=d["name"],
                channels=[
                    ChannelSpec(**c) if isinstance(c, dict) else ChannelSpec(name=c)
                    for c in d["channels"]
                ],
                sampling_rate=d["sampling_rate"],
                label_names=list(d["label_names"]),
                window_length=d["window_length"],
                window_stride=d["window_stride"],
                split_ratio=d.get("split_ratio", 0.8),
                normalization=d.get("normalization", "zscore"),
                augmentation=[AugmentationSpec(**a) for a in d.get("augmentation", [])],
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed schema: {exc}") from exc
        return schema.validate()

    @classmethod
    def load(cls, path: str | Path) -> "DatasetSchema":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read schema {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: schema is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def stride_from_overlap(window_length: int, overlap_fraction: float | None = None,
                        overlap_samples: int | None = None) -> int:
    """Stride from an overlap given either as a fraction of the window or in samples."""
    if (overlap_fraction is None) == (overlap_samples is None):
        raise ConfigError("give exactly one of overlap_fraction / overlap_samples")
    if overlap_fraction is not None:
        if not 0.0 <= overlap_fraction < 1.0:
            raise ConfigError(f"overlap fraction must be in [0, 1), got {overlap_fraction}")
        return max(1, int(window_length * (1.0 - overlap_fraction)))
    if not 0 <= overlap_samples < window_length:
        raise ConfigError(
            f"overlap samples must be in [0, window_length), got {overlap_samples}"
        )
    return window_length - overlap_samples
