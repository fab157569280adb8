"""Raw recordings to canonical windows: ingest, segment, split, normalize, augment.

The canonical input is a directory of UTF-8 CSV files, one recording each,
whose header names the channels and may include a `label` column. The stages
compose in that order; normalization statistics and augmentation touch the
train split only.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import TEST, TRAIN, WindowedDataset
from .errors import ConfigError, DataError
from .rng import rng_for
from .schema import AugmentationSpec, DatasetSchema

log = logging.getLogger(__name__)

LABEL_COLUMN = "label"


@dataclass
class LabeledRecording:
    recording_id: str
    data: np.ndarray  # [C, L] float32, channels in schema order
    labels: np.ndarray | None  # [L] int32 class ids, or None when unlabeled


@dataclass
class SegmentationSummary:
    windows: int = 0
    recordings: int = 0
    skipped: list[str] = field(default_factory=list)


def ingest(path: str | Path, schema: DatasetSchema) -> list[LabeledRecording]:
    """Parse every *.csv under `path` into channel-ordered recordings."""
    schema.validate()
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"input path {root} is not a directory")
    files = sorted(root.glob("*.csv"))
    if not files:
        raise DataError(f"no .csv recordings found under {root}")
    return [_read_csv(f, schema) for f in files]


def _read_csv(file: Path, schema: DatasetSchema) -> LabeledRecording:
    with open(file, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{file}: empty file, expected a header row") from None
        header = [h.strip() for h in header]
        col_of = {name: i for i, name in enumerate(header)}
        missing = [c.name for c in schema.channels if c.name not in col_of]
        if missing:
            raise DataError(
                f"{file}: channel mismatch, header lacks schema channels {missing} "
                f"(found columns {header})"
            )
        chan_cols = [col_of[c.name] for c in schema.channels]
        label_col = col_of.get(LABEL_COLUMN)

        rows: list[list[float]] = []
        labels: list[int] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                rows.append([float(row[i]) for i in chan_cols])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{file}:{lineno}: non-numeric or missing value ({exc})") from exc
            if label_col is not None:
                name = row[label_col].strip()
                if name not in schema.label_names:
                    raise DataError(
                        f"{file}:{lineno}: unknown label {name!r}, "
                        f"schema labels are {schema.label_names}"
                    )
                labels.append(schema.label_names.index(name))

    data = np.asarray(rows, dtype=np.float32).T if rows else np.zeros(
        (schema.num_channels, 0), dtype=np.float32
    )
    label_arr = np.asarray(labels, dtype=np.int32) if label_col is not None else None
    return LabeledRecording(recording_id=file.stem, data=data, labels=label_arr)


def _window_label(labels: np.ndarray, start: int, length: int, labeling: str) -> int:
    segment = labels[start : start + length]
    if labeling == "last-sample":
        return int(segment[-1])
    # majority, ties broken by lowest class id
    return int(np.bincount(segment).argmax())


def segment(
    recording: LabeledRecording,
    window_length: int,
    window_stride: int,
    labeling: str = "majority",
) -> list[tuple[np.ndarray, int, int]]:
    """Slice one recording into (window [C, W], label, start offset) triples.

    Windows start at offsets 0, S, 2S, ... while the whole window fits.
    Recordings shorter than one window yield an empty list with a warning.
    """
    if window_length < 1:
        raise ConfigError(f"window_length must be >= 1, got {window_length}")
    if not 1 <= window_stride <= window_length:
        raise ConfigError(
            f"window_stride must satisfy 1 <= stride <= window_length, "
            f"got stride={window_stride} length={window_length}"
        )
    if labeling not in ("majority", "last-sample"):
        raise ConfigError(f"unknown labeling policy {labeling!r}")
    length = recording.data.shape[1]
    if length < window_length:
        log.warning(
            "recording %s: length %d < window %d, skipped",
            recording.recording_id, length, window_length,
        )
        return []
    if recording.labels is None:
        raise DataError(
            f"recording {recording.recording_id!r} has no labels; "
            "cannot assign window labels (CSV needs a 'label' column)"
        )
    out = []
    for start in range(0, length - window_length + 1, window_stride):
        window = np.ascontiguousarray(recording.data[:, start : start + window_length])
        out.append((window, _window_label(recording.labels, start, window_length, labeling), start))
    return out


def segment_dataset(
    recordings: list[LabeledRecording],
    schema: DatasetSchema,
    labeling: str = "majority",
) -> tuple[WindowedDataset, SegmentationSummary]:
    """Segment every recording and stack the results into an (all-train) dataset."""
    schema.validate()
    summary = SegmentationSummary(recordings=len(recordings))
    recordings = sorted(recordings, key=lambda r: r.recording_id)
    rec_ids = [r.recording_id for r in recordings]
    windows, labels, prov_rec, prov_start = [], [], [], []
    for idx, rec in enumerate(recordings):
        if rec.data.shape[0] != schema.num_channels:
            raise DataError(
                f"recording {rec.recording_id!r}: {rec.data.shape[0]} channels, "
                f"schema declares {schema.num_channels}"
            )
        pieces = segment(rec, schema.window_length, schema.window_stride, labeling)
        if not pieces:
            summary.skipped.append(rec.recording_id)
            continue
        for window, label, start in pieces:
            windows.append(window)
            labels.append(label)
            prov_rec.append(idx)
            prov_start.append(start)
    if not windows:
        raise DataError("segmentation produced no windows (all recordings too short?)")
    summary.windows = len(windows)
    return (
        WindowedDataset(
            schema=schema,
            windows=np.stack(windows).astype(np.float32),
            labels=np.asarray(labels, dtype=np.int32),
            split=np.zeros(len(windows), dtype=np.uint8),
            recording_ids=rec_ids,
            provenance_rec=np.asarray(prov_rec, dtype=np.uint32),
            provenance_start=np.asarray(prov_start, dtype=np.uint32),
        ),
        summary,
    )


def split(
    ds: WindowedDataset,
    ratio: float | None = None,
    mode: str = "by-window",
    seed: int = 0,
) -> WindowedDataset:
    """Assign train/test tags, deterministically under `seed`.

    by-window shuffles windows; by-recording keeps each recording whole on
    one side, warning when the achievable ratio misses the request by >10%.
    """
    ratio = ds.schema.split_ratio if ratio is None else ratio
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"split ratio must be in (0, 1), got {ratio}")
    n = len(ds)
    tags = np.full(n, TEST, dtype=np.uint8)
    if mode == "by-window":
        if n < 2:
            raise DataError(f"cannot split {n} windows into two nonempty parts")
        n_train = min(max(int(round(ratio * n)), 1), n - 1)
        perm = rng_for(seed, "split-by-window").permutation(n)
        tags[perm[:n_train]] = TRAIN
    elif mode == "by-recording":
        rec_indices = np.unique(ds.provenance_rec)
        if len(rec_indices) < 2:
            raise DataError(
                "by-recording split needs at least 2 recordings to produce both splits, "
                f"got {len(rec_indices)}"
            )
        order = rng_for(seed, "split-by-recording").permutation(rec_indices)
        target = ratio * n
        train_recs, train_windows = [], 0
        for rec in order:
            count = int((ds.provenance_rec == rec).sum())
            if train_windows < target and len(train_recs) < len(rec_indices) - 1:
                train_recs.append(rec)
                train_windows += count
        train_mask = np.isin(ds.provenance_rec, train_recs)
        tags[train_mask] = TRAIN
        achieved = train_windows / n
        if abs(achieved - ratio) > 0.10:
            log.warning(
                "by-recording split achieved train ratio %.3f vs requested %.3f "
                "(too few recordings for a closer match)", achieved, ratio,
            )
    else:
        raise ConfigError(f"unknown split mode {mode!r}; expected by-window or by-recording")
    return ds.with_windows(ds.windows.copy(), split=tags)


def _train_channel_stats(ds: WindowedDataset) -> tuple[np.ndarray, np.ndarray]:
    train = ds.windows[ds.indices("train")]
    if len(train) == 0:
        raise DataError("no train windows to compute normalization statistics")
    mu = train.mean(axis=(0, 2), dtype=np.float64)
    sigma = train.std(axis=(0, 2), dtype=np.float64)
    return mu, sigma


def normalize(ds: WindowedDataset, mode: str | None = None, eps: float = 1e-8) -> WindowedDataset:
    """Scale every split with statistics computed on the train split only."""
    mode = ds.schema.normalization if mode is None else mode
    if mode == "none":
        return ds
    if ds.normalized:
        raise DataError("dataset is already normalized")
    train = ds.windows[ds.indices("train")]
    if len(train) == 0:
        raise DataError("no train windows to compute normalization statistics")
    if mode == "zscore":
        center = train.mean(axis=(0, 2), dtype=np.float64)
        scale = train.std(axis=(0, 2), dtype=np.float64)
    elif mode == "minmax":
        center = train.min(axis=(0, 2)).astype(np.float64)
        scale = (train.max(axis=(0, 2)) - train.min(axis=(0, 2))).astype(np.float64)
    else:
        raise ConfigError(f"unknown normalization mode {mode!r}")
    degenerate = scale == 0.0
    out = (ds.windows.astype(np.float64) - center[None, :, None]) / (scale + eps)[None, :, None]
    if degenerate.any():
        names = [ds.schema.channels[i].name for i in np.flatnonzero(degenerate)]
        log.warning("channels %s are constant on the train split; normalized to zero", names)
        out[:, degenerate, :] = 0.0
    return ds.with_windows(out.astype(np.float32), normalized=True)


def _minority_classes(counts: np.ndarray) -> np.ndarray:
    return np.flatnonzero(counts < counts.max())


def augment(
    ds: WindowedDataset,
    specs: list[AugmentationSpec],
    seed: int = 0,
) -> WindowedDataset:
    """Apply augmentations to the train split; test windows are never touched."""
    for spec in specs:
        spec.validate()
    windows = ds.windows.copy()
    labels = ds.labels.copy()
    tags = ds.split.copy()
    prov_rec = ds.provenance_rec.copy()
    prov_start = ds.provenance_start.copy()

    for si, spec in enumerate(specs):
        rng = rng_for(seed, "augment", si, spec.kind)
        train_idx = np.flatnonzero(tags == TRAIN)
        if len(train_idx) == 0:
            raise DataError("augmentation needs a nonempty train split")
        train_labels = labels[train_idx]
        counts = np.bincount(train_labels, minlength=ds.schema.num_classes)
        sigma = windows[train_idx].std(axis=(0, 2), dtype=np.float64).astype(np.float32)

        if spec.kind in ("jitter", "scale"):
            if spec.magnitude == 0.0:
                continue
            if spec.target == "minority-classes":
                chosen = train_idx[np.isin(train_labels, _minority_classes(counts))]
            else:
                chosen = train_idx
            if len(chosen) == 0:
                continue
            if spec.kind == "jitter":
                noise = rng.normal(0.0, 1.0, windows[chosen].shape).astype(np.float32)
                windows[chosen] += noise * (spec.magnitude * sigma)[None, :, None]
            else:
                factors = rng.uniform(1.0 - spec.magnitude, 1.0 + spec.magnitude, len(chosen))
                windows[chosen] *= factors[:, None, None].astype(np.float32)
        else:  # oversample
            target = int(np.ceil(spec.ratio * counts.max()))
            extra_w, extra_l, extra_r, extra_s = [], [], [], []
            for cls in range(ds.schema.num_classes):
                have = counts[cls]
                if have == 0 or have >= target:
                    continue
                pool = train_idx[train_labels == cls]
                picks = rng.choice(pool, size=target - have, replace=True)
                dup = windows[picks].copy()
                if spec.magnitude > 0:
                    noise = rng.normal(0.0, 1.0, dup.shape).astype(np.float32)
                    dup += noise * (spec.magnitude * sigma)[None, :, None]
                extra_w.append(dup)
                extra_l.append(labels[picks])
                extra_r.append(prov_rec[picks])
                extra_s.append(prov_start[picks])
            if extra_w:
                windows = np.concatenate([windows] + extra_w)
                labels = np.concatenate([labels] + extra_l)
                tags = np.concatenate([tags, np.zeros(sum(len(w) for w in extra_w), dtype=np.uint8)])
                prov_rec = np.concatenate([prov_rec] + extra_r)
                prov_start = np.concatenate([prov_start] + extra_s)

    return WindowedDataset(
        schema=ds.schema,
        windows=windows,
        labels=labels,
        split=tags,
        recording_ids=ds.recording_ids,
        provenance_rec=prov_rec,
        provenance_start=prov_start,
        normalized=ds.normalized,
    )


def prepare(
    input_dir: str | Path,
    schema: DatasetSchema,
    seed: int = 0,
    split_mode: str = "by-window",
    labeling: str = "majority",
) -> tuple[WindowedDataset, SegmentationSummary]:
    """Full pipeline: ingest -> segment -> split -> normalize -> augment."""
    recordings = ingest(input_dir, schema)
    ds, summary = segment_dataset(recordings, schema, labeling)
    ds = split(ds, schema.split_ratio, split_mode, seed)
    ds = normalize(ds)
    if schema.augmentation:
        ds = augment(ds, schema.augmentation, seed)
    return ds, summary
