"""Data pipeline: CSV ingestion, windowing against the enumeration oracle,
normalization, augmentation and splitting."""

import logging

import numpy as np
import pytest

from automr.container import TEST, WindowedDataset
from automr.errors import ConfigError, DataError
from automr.pipeline import (
    LabeledRecording,
    augment,
    ingest,
    normalize,
    prepare,
    segment,
    segment_dataset,
    split,
)
from automr.schema import AugmentationSpec, ChannelSpec, DatasetSchema, stride_from_overlap


def make_schema(**overrides):
    kwargs = dict(
        name="unit",
        channels=[ChannelSpec("ax"), ChannelSpec("ay"), ChannelSpec("az")],
        sampling_rate=50.0,
        label_names=["rest", "walk", "run"],
        window_length=8,
        window_stride=4,
        normalization="zscore",
    )
    kwargs.update(overrides)
    return DatasetSchema(**kwargs).validate()


def write_csv(path, header, rows):
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n")


def make_recording(rid, length, label=0, channels=3, seed=0):
    rng = np.random.default_rng(seed)
    return LabeledRecording(
        recording_id=rid,
        data=rng.normal(size=(channels, length)).astype(np.float32),
        labels=np.full(length, label, dtype=np.int32),
    )


def enumerate_offsets(length, window, stride):
    """Brute-force oracle: every aligned offset whose window fits."""
    return [o for o in range(0, length + 1) if o % stride == 0 and o + window <= length]


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------


def test_ingest_parses_recording(tmp_path):
    schema = make_schema()
    rows = [[i * 0.1, i * 0.2, i * 0.3, "walk"] for i in range(100)]
    write_csv(tmp_path / "r0.csv", ["ax", "ay", "az", "label"], rows)
    recs = ingest(tmp_path, schema)
    assert len(recs) == 1
    assert recs[0].data.shape == (3, 100)
    assert recs[0].labels.tolist() == [1] * 100
    assert np.allclose(recs[0].data[2, 4], 0.4 * 3, atol=1e-6)


def test_ingest_channel_mismatch(tmp_path):
    schema = make_schema(channels=[ChannelSpec(f"c{i}") for i in range(6)])
    write_csv(tmp_path / "r0.csv", ["c0", "c1", "c2"], [[1, 2, 3]])
    with pytest.raises(DataError, match="channel mismatch"):
        ingest(tmp_path, schema)


def test_ingest_unknown_label_names_row(tmp_path):
    schema = make_schema()
    rows = [[0, 0, 0, "walk"], [0, 0, 0, "moonwalk"]]
    write_csv(tmp_path / "r0.csv", ["ax", "ay", "az", "label"], rows)
    with pytest.raises(DataError, match=r"r0\.csv:3: unknown label 'moonwalk'"):
        ingest(tmp_path, schema)


def test_ingest_non_numeric_value(tmp_path):
    schema = make_schema()
    write_csv(tmp_path / "r0.csv", ["ax", "ay", "az", "label"], [[1, "oops", 3, "rest"]])
    with pytest.raises(DataError, match=r"r0\.csv:2"):
        ingest(tmp_path, schema)


def test_ingest_column_order_follows_schema(tmp_path):
    schema = make_schema()
    write_csv(tmp_path / "r0.csv", ["az", "ax", "ay", "label"], [[3, 1, 2, "rest"]])
    recs = ingest(tmp_path, schema)
    assert recs[0].data[:, 0].tolist() == [1.0, 2.0, 3.0]


# ---------------------------------------------------------------------------
# segment
# ---------------------------------------------------------------------------


def test_single_window_fit():
    pieces = segment(make_recording("r", 128), 128, 64)
    assert len(pieces) == 1 and pieces[0][2] == 0


def test_three_windows_with_half_overlap():
    pieces = segment(make_recording("r", 256), 128, 64)
    assert [p[2] for p in pieces] == [0, 64, 128]


def test_window_offsets_match_enumeration():
    pieces = segment(make_recording("r", 31), 15, 8)
    assert [p[2] for p in pieces] == enumerate_offsets(31, 15, 8) == [0, 8, 16]


def test_segment_offsets_property():
    rng = np.random.default_rng(0)
    for _ in range(200):
        window = int(rng.integers(1, 30))
        stride = int(rng.integers(1, window + 1))
        length = int(rng.integers(0, 80))
        rec = make_recording("r", length)
        pieces = segment(rec, window, stride)
        assert [p[2] for p in pieces] == enumerate_offsets(length, window, stride)


def test_short_recording_skipped_with_warning(caplog):
    with caplog.at_level(logging.WARNING):
        pieces = segment(make_recording("r", 5), 10, 5)
    assert pieces == []
    assert "skipped" in caplog.text


def test_majority_labeling_breaks_ties_low():
    rec = make_recording("r", 8)
    rec.labels = np.array([2, 2, 1, 1, 0, 0, 1, 2], dtype=np.int32)
    (window, label, _), = segment(rec, 8, 8)
    # counts: 0 -> 2, 1 -> 3, 2 -> 3; majority tie between 1 and 2 -> 1
    assert label == 1
    (_, last_label, _), = segment(rec, 8, 8, labeling="last-sample")
    assert last_label == 2


def test_segment_validates_stride():
    with pytest.raises(ConfigError):
        segment(make_recording("r", 20), 8, 9)
    with pytest.raises(ConfigError):
        segment(make_recording("r", 20), 8, 0)


def test_unlabeled_recording_is_rejected():
    rec = make_recording("r", 20)
    rec.labels = None
    with pytest.raises(DataError, match="no labels"):
        segment(rec, 8, 4)


def test_stride_from_overlap():
    assert stride_from_overlap(25, overlap_fraction=0.5) == 12
    assert stride_from_overlap(128, overlap_fraction=0.5) == 64
    assert stride_from_overlap(15, overlap_samples=7) == 8


def test_segment_dataset_summary_and_order():
    schema = make_schema(window_length=8, window_stride=4)
    recs = [
        make_recording("b", 16, label=1, seed=1),
        make_recording("a", 12, label=0, seed=2),
        make_recording("tiny", 3, label=2, seed=3),
    ]
    ds, summary = segment_dataset(recs, schema)
    assert summary.windows == len(ds) == 3 + 2
    assert summary.skipped == ["tiny"]
    # canonical order: recording id, then offset
    assert ds.recording_ids == ["a", "b", "tiny"]
    starts = list(zip(ds.provenance_rec.tolist(), ds.provenance_start.tolist()))
    assert starts == sorted(starts)


# ---------------------------------------------------------------------------
# normalize
# ---------------------------------------------------------------------------


def make_dataset(n=20, channels=3, window=8, seed=0, labels=None):
    rng = np.random.default_rng(seed)
    schema = make_schema(window_length=window, window_stride=window, channels=[
        ChannelSpec(f"c{i}") for i in range(channels)
    ])
    if labels is None:
        labels = rng.integers(0, 3, size=n).astype(np.int32)
    split_tags = np.zeros(n, dtype=np.uint8)
    split_tags[int(n * 0.8):] = TEST
    return WindowedDataset(
        schema=schema,
        windows=rng.normal(2.0, 3.0, size=(n, channels, window)).astype(np.float32),
        labels=np.asarray(labels, dtype=np.int32),
        split=split_tags,
        recording_ids=["r0", "r1"],
        provenance_rec=(np.arange(n) % 2).astype(np.uint32),
        provenance_start=np.zeros(n, dtype=np.uint32),
    )


def test_zscore_uses_train_statistics():
    ds = normalize(make_dataset(seed=4))
    train = ds.windows[ds.indices("train")]
    assert np.abs(train.mean(axis=(0, 2))).max() < 1e-5
    assert np.abs(train.std(axis=(0, 2)) - 1.0).max() < 1e-3
    # test split transformed with the same statistics, so generally not centred
    assert ds.normalized


def test_constant_channel_zeroed_with_warning(caplog):
    ds = make_dataset(seed=5)
    ds.windows[:, 1, :] = 42.0
    with caplog.at_level(logging.WARNING):
        out = normalize(ds)
    assert np.all(out.windows[:, 1, :] == 0.0)
    assert "constant" in caplog.text


def test_double_normalization_rejected():
    ds = normalize(make_dataset(seed=6))
    with pytest.raises(DataError, match="already normalized"):
        normalize(ds)


def test_minmax_maps_train_to_unit_interval():
    ds = normalize(make_dataset(seed=7), mode="minmax")
    train = ds.windows[ds.indices("train")]
    assert train.min() >= -1e-6 and train.max() <= 1.0 + 1e-6


# ---------------------------------------------------------------------------
# augment
# ---------------------------------------------------------------------------


def test_zero_magnitude_jitter_is_noop():
    ds = make_dataset(seed=8)
    out = augment(ds, [AugmentationSpec(kind="jitter", magnitude=0.0)], seed=1)
    assert out.windows.tobytes() == ds.windows.tobytes()


def test_jitter_perturbs_train_only():
    ds = make_dataset(seed=9)
    out = augment(ds, [AugmentationSpec(kind="jitter", magnitude=0.1)], seed=1)
    test_idx = ds.indices("test")
    assert out.windows[test_idx].tobytes() == ds.windows[test_idx].tobytes()
    assert not np.array_equal(out.windows[ds.indices("train")], ds.windows[ds.indices("train")])


def test_scale_factors_bounded():
    ds = make_dataset(seed=10)
    ds.windows[:] = 1.0
    out = augment(ds, [AugmentationSpec(kind="scale", magnitude=0.2)], seed=2)
    train = out.windows[out.indices("train")]
    per_window = train.reshape(len(train), -1)
    assert ((per_window.min(axis=1) >= 0.8 - 1e-6) & (per_window.max(axis=1) <= 1.2 + 1e-6)).all()


def test_oversample_balanced_classes_is_noop():
    labels = np.array([0, 1, 2] * 6 + [0, 2], dtype=np.int32)  # train part balanced-ish
    ds = make_dataset(n=20, seed=11, labels=labels)
    ds.labels[ds.indices("train")] = np.arange(16) % 3  # counts 6/5/5 -> all >= 0.5 * max
    out = augment(ds, [AugmentationSpec(kind="oversample", magnitude=0.05)], seed=3)
    assert len(out) == len(ds)


def test_oversample_reaches_ratio_floor():
    labels = np.array([0] * 100 + [1] * 10, dtype=np.int32)
    rng = np.random.default_rng(12)
    schema = make_schema(label_names=["a", "b"], window_length=4, window_stride=4)
    ds = WindowedDataset(
        schema=schema,
        windows=rng.normal(size=(110, 3, 4)).astype(np.float32),
        labels=labels,
        split=np.zeros(110, dtype=np.uint8),
        recording_ids=["r"],
        provenance_rec=np.zeros(110, dtype=np.uint32),
        provenance_start=np.arange(110, dtype=np.uint32),
    )
    out = augment(ds, [AugmentationSpec(kind="oversample", magnitude=0.05, ratio=0.5)], seed=4)
    counts = out.class_counts("train")
    assert counts[0] == 100
    assert counts[1] >= 50


def test_augment_determinism():
    ds = make_dataset(seed=13)
    specs = [AugmentationSpec(kind="jitter", magnitude=0.2),
             AugmentationSpec(kind="oversample", magnitude=0.1)]
    a = augment(ds, specs, seed=5)
    b = augment(ds, specs, seed=5)
    assert a.windows.tobytes() == b.windows.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()


def test_augment_rejects_test_target():
    with pytest.raises(ConfigError, match="rejected"):
        AugmentationSpec(kind="jitter", magnitude=0.1, target="test").validate()


# ---------------------------------------------------------------------------
# split
# ---------------------------------------------------------------------------


def test_by_window_split_ratio_exact():
    ds = make_dataset(n=100, seed=14)
    out = split(ds, ratio=0.8, mode="by-window", seed=0)
    assert len(out.indices("train")) == 80
    assert len(out.indices("test")) == 20


def test_split_determinism():
    ds = make_dataset(n=50, seed=15)
    a = split(ds, ratio=0.7, seed=3)
    b = split(ds, ratio=0.7, seed=3)
    assert np.array_equal(a.split, b.split)
    c = split(ds, ratio=0.7, seed=4)
    assert not np.array_equal(a.split, c.split)


def test_by_recording_keeps_recordings_whole():
    rng = np.random.default_rng(16)
    n = 60
    schema = make_schema(window_length=4, window_stride=4)
    ds = WindowedDataset(
        schema=schema,
        windows=rng.normal(size=(n, 3, 4)).astype(np.float32),
        labels=rng.integers(0, 3, size=n).astype(np.int32),
        split=np.zeros(n, dtype=np.uint8),
        recording_ids=[f"r{i}" for i in range(6)],
        provenance_rec=(np.arange(n) % 6).astype(np.uint32),
        provenance_start=np.zeros(n, dtype=np.uint32),
    )
    out = split(ds, ratio=0.8, mode="by-recording", seed=1)
    for rec in range(6):
        tags = out.split[out.provenance_rec == rec]
        assert len(set(tags.tolist())) == 1  # no recording straddles the split
    train_recs = set(out.provenance_rec[out.indices("train")].tolist())
    test_recs = set(out.provenance_rec[out.indices("test")].tolist())
    assert not (train_recs & test_recs)


def test_by_recording_single_recording_fails():
    ds = make_dataset(n=10, seed=17)
    ds.provenance_rec[:] = 0
    with pytest.raises(DataError, match="at least 2 recordings"):
        split(ds, mode="by-recording", seed=0)


def test_by_recording_warns_on_coarse_ratio(caplog):
    rng = np.random.default_rng(18)
    n = 20
    schema = make_schema(window_length=4, window_stride=4)
    ds = WindowedDataset(
        schema=schema,
        windows=rng.normal(size=(n, 3, 4)).astype(np.float32),
        labels=rng.integers(0, 3, size=n).astype(np.int32),
        split=np.zeros(n, dtype=np.uint8),
        recording_ids=["r0", "r1"],
        provenance_rec=(np.arange(n) % 2).astype(np.uint32),
        provenance_start=np.zeros(n, dtype=np.uint32),
    )
    with caplog.at_level(logging.WARNING):
        split(ds, ratio=0.8, mode="by-recording", seed=0)  # only 50/50 achievable
    assert "achieved" in caplog.text


# ---------------------------------------------------------------------------
# end-to-end pipeline determinism
# ---------------------------------------------------------------------------


def test_prepare_is_bit_deterministic(tmp_path):
    rng = np.random.default_rng(19)
    schema = make_schema(
        window_length=8,
        window_stride=4,
        augmentation=[AugmentationSpec(kind="jitter", magnitude=0.1)],
    )
    for r in range(3):
        rows = [
            [f"{v:.5f}" for v in rng.normal(size=3)] + [schema.label_names[r]]
            for _ in range(40)
        ]
        write_csv(tmp_path / f"rec{r}.csv", ["ax", "ay", "az", "label"], rows)
    ds1, _ = prepare(tmp_path, schema, seed=7)
    ds2, _ = prepare(tmp_path, schema, seed=7)
    assert ds1.windows.tobytes() == ds2.windows.tobytes()
    assert ds1.labels.tobytes() == ds2.labels.tobytes()
    assert ds1.split.tobytes() == ds2.split.tobytes()
