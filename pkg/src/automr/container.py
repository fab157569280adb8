"""The canonical windowed-dataset store and its binary `.awd` container.

Container layout (all integers little-endian):

    bytes 0..3   magic "AWD1"
    u32          header length in bytes
    header       UTF-8 JSON: {"format_version": 1, "schema": {...},
                 "normalized": bool, "n_windows": N, "n_channels": C,
                 "window_length": W, "recording_ids": [str, ...]}
    N*C*W * f32  window tensor, C-order [N, C, W]
    N * i32      labels
    N * u8       split tags (0 = train, 1 = test)
    N * u32      provenance: recording index into header recording_ids
    N * u32      provenance: start sample within the recording

The layout is bit-exact: writing, reading and re-writing a dataset produces
identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError
from .schema import DatasetSchema

MAGIC = b"AWD1"
FORMAT_VERSION = 1

TRAIN, TEST = 0, 1


@dataclass
class WindowedDataset:
    """Windows [N, C, W] float32 with integer labels, split tags and provenance."""

    schema: DatasetSchema
    windows: np.ndarray
    labels: np.ndarray
    split: np.ndarray
    recording_ids: list[str]
    provenance_rec: np.ndarray  # index into recording_ids, per window
    provenance_start: np.ndarray  # start sample within the recording, per window
    normalized: bool = False

    def __post_init__(self) -> None:
        n = len(self.windows)
        if self.windows.ndim != 3:
            raise DataError(f"windows must be [N, C, W], got {self.windows.shape}")
        for name, arr in (
            ("labels", self.labels),
            ("split", self.split),
            ("provenance_rec", self.provenance_rec),
            ("provenance_start", self.provenance_start),
        ):
            if len(arr) != n:
                raise DataError(f"{name} length {len(arr)} != window count {n}")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.schema.num_classes):
            raise DataError(
                f"labels out of range [0, {self.schema.num_classes}): "
                f"min={self.labels.min()} max={self.labels.max()}"
            )

    def __len__(self) -> int:
        return len(self.windows)

    @property
    def num_channels(self) -> int:
        return self.windows.shape[1]

    @property
    def window_length(self) -> int:
        return self.windows.shape[2]

    def indices(self, split: str) -> np.ndarray:
        tag = {"train": TRAIN, "test": TEST}[split]
        return np.flatnonzero(self.split == tag)

    def class_counts(self, split: str | None = None) -> np.ndarray:
        labels = self.labels if split is None else self.labels[self.indices(split)]
        return np.bincount(labels, minlength=self.schema.num_classes)

    def with_windows(self, windows: np.ndarray, **changes) -> "WindowedDataset":
        return replace(self, windows=windows, **changes)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        header = {
            "format_version": FORMAT_VERSION,
            "schema": self.schema.to_dict(),
            "normalized": self.normalized,
            "n_windows": int(len(self)),
            "n_channels": int(self.windows.shape[1]),
            "window_length": int(self.windows.shape[2]),
            "recording_ids": self.recording_ids,
        }
        header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", len(header_bytes)))
            f.write(header_bytes)
            f.write(np.ascontiguousarray(self.windows, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(self.labels, dtype="<i4").tobytes())
            f.write(np.ascontiguousarray(self.split, dtype="u1").tobytes())
            f.write(np.ascontiguousarray(self.provenance_rec, dtype="<u4").tobytes())
            f.write(np.ascontiguousarray(self.provenance_start, dtype="<u4").tobytes())
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path) -> "WindowedDataset":
        path = Path(path)
        try:
            blob = path.read_bytes()
        except OSError as exc:
            raise DataError(f"cannot read dataset container {path}: {exc}") from exc
        if blob[:4] != MAGIC:
            raise DataError(f"{path}: not a windowed-dataset container (bad magic)")
        (header_len,) = struct.unpack_from("<I", blob, 4)
        try:
            header = json.loads(blob[8 : 8 + header_len].decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise DataError(f"{path}: corrupt container header: {exc}") from exc
        if header.get("format_version") != FORMAT_VERSION:
            raise DataError(
                f"{path}: unsupported container version {header.get('format_version')}, "
                f"expected {FORMAT_VERSION}"
            )
        schema = DatasetSchema.from_dict(header["schema"])
        n = header["n_windows"]
        c = header["n_channels"]
        w = header["window_length"]
        offset = 8 + header_len
        expected = offset + n * c * w * 4 + n * 4 + n + n * 4 + n * 4
        if len(blob) != expected:
            raise DataError(f"{path}: container payload is {len(blob)} bytes, expected {expected}")

        def take(dtype: str, count: int) -> np.ndarray:
            nonlocal offset
            arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
            offset += arr.nbytes
            return arr

        windows = take("<f4", n * c * w).reshape(n, c, w).copy()
        labels = take("<i4", n).copy()
        split = take("u1", n).copy()
        prov_rec = take("<u4", n).copy()
        prov_start = take("<u4", n).copy()
        return cls(
            schema=schema,
            windows=windows,
            labels=labels.astype(np.int32),
            split=split,
            recording_ids=list(header["recording_ids"]),
            provenance_rec=prov_rec,
            provenance_start=prov_start,
            normalized=bool(header["normalized"]),
        )
