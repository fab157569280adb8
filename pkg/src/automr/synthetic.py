"""Bundled synthetic gesture data: three sinusoid classes over three channels.

Class k is a sinusoid of frequency FREQS[k] cycles per window; channels carry
phase-shifted copies and Gaussian noise of NOISE_SIGMA is added throughout.
Used by the test suite and as a zero-download way to exercise the full CLI:
`python -m automr.synthetic --out data/` writes CSV recordings plus a schema.
"""

from __future__ import annotations

import argparse
import csv
from pathlib import Path

import numpy as np

from .container import TEST, TRAIN, WindowedDataset
from .rng import rng_for
from .schema import ChannelSpec, DatasetSchema

CLASS_NAMES = ["swipe", "circle", "shake"]
FREQS = [2.0, 5.0, 11.0]  # cycles per window
NOISE_SIGMA = 0.1
NUM_CHANNELS = 3
WINDOW = 128


def synthetic_schema(window_length: int = WINDOW, window_stride: int | None = None) -> DatasetSchema:
    return DatasetSchema(
        name="synthetic-gestures",
        channels=[ChannelSpec(f"ch{i}", modality="synthetic") for i in range(NUM_CHANNELS)],
        sampling_rate=32.0,
        label_names=list(CLASS_NAMES),
        window_length=window_length,
        window_stride=window_stride if window_stride is not None else max(window_length // 2, 1),
        normalization="zscore",
    ).validate()


def _clean_window(cls: int, window_length: int) -> np.ndarray:
    t = np.arange(window_length) / window_length
    phases = np.arange(NUM_CHANNELS)[:, None] * (2.0 * np.pi / 3.0)
    return np.sin(2.0 * np.pi * FREQS[cls] * t[None, :] + phases).astype(np.float32)


def make_synthetic_dataset(
    seed: int = 0,
    train_per_class: int = 100,
    test_per_class: int = 20,
    window_length: int = WINDOW,
) -> WindowedDataset:
    """Windows sampled directly (no CSV round trip), split assigned up front."""
    schema = synthetic_schema(window_length)
    rng = rng_for(seed, "synthetic-windows")
    windows, labels, tags = [], [], []
    for cls in range(len(CLASS_NAMES)):
        clean = _clean_window(cls, window_length)
        for tag, count in ((TRAIN, train_per_class), (TEST, test_per_class)):
            for _ in range(count):
                noise = rng.normal(0.0, NOISE_SIGMA, clean.shape).astype(np.float32)
                windows.append(clean + noise)
                labels.append(cls)
                tags.append(tag)
    n = len(windows)
    return WindowedDataset(
        schema=schema,
        windows=np.stack(windows),
        labels=np.asarray(labels, dtype=np.int32),
        split=np.asarray(tags, dtype=np.uint8),
        recording_ids=[f"synthetic-{c}" for c in CLASS_NAMES],
        provenance_rec=np.repeat(
            np.arange(len(CLASS_NAMES), dtype=np.uint32), n // len(CLASS_NAMES)
        ),
        provenance_start=np.zeros(n, dtype=np.uint32),
    )


def write_synthetic_csvs(
    out_dir: str | Path,
    seed: int = 0,
    recordings_per_class: int = 3,
    samples_per_recording: int = 1280,
    window_length: int = WINDOW,
) -> Path:
    """Write CSV recordings plus schema.json; returns the schema path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    schema = synthetic_schema(window_length)
    rng = rng_for(seed, "synthetic-recordings")
    t = np.arange(samples_per_recording) / window_length
    for cls, name in enumerate(CLASS_NAMES):
        phases = np.arange(NUM_CHANNELS)[:, None] * (2.0 * np.pi / 3.0)
        clean = np.sin(2.0 * np.pi * FREQS[cls] * t[None, :] + phases)
        for r in range(recordings_per_class):
            signal = clean + rng.normal(0.0, NOISE_SIGMA, clean.shape)
            path = out_dir / f"{name}_{r:02d}.csv"
            with open(path, "w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f)
                writer.writerow([c.name for c in schema.channels] + ["label"])
                for i in range(samples_per_recording):
                    writer.writerow([f"{v:.6f}" for v in signal[:, i]] + [name])
    schema_path = out_dir / "schema.json"
    schema.save(schema_path)
    return schema_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="write the bundled synthetic dataset as CSV")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--recordings-per-class", type=int, default=3)
    parser.add_argument("--samples", type=int, default=1280)
    args = parser.parse_args(argv)
    schema_path = write_synthetic_csvs(
        args.out, args.seed, args.recordings_per_class, args.samples
    )
    print(f"wrote synthetic recordings and {schema_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
