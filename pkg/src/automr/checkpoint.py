"""Versioned binary checkpoints.

Layout (integers little-endian):

    bytes 0..3   magic "AMCK"
    u32          format version (currently 1)
    u32          metadata length
    metadata     UTF-8 JSON: model_config, train_config, epoch,
                 best (metric, epoch), scheduler state, rng record,
                 optimizer step count, and a tensor table of
                 {"name", "section", "dtype", "shape"} entries
    payload      raw tensor bytes, concatenated in table order

Sections are "param", "buffer", "opt_m", "opt_v". Loading validates magic,
version, the tensor table against the model config, and the payload size;
a checkpoint is either loaded whole or not at all.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import QuartzConfig, param_shapes, buffer_shapes

MAGIC = b"AMCK"
FORMAT_VERSION = 1

_SECTIONS = ("param", "buffer", "opt_m", "opt_v")


@dataclass
class TrainState:
    """Everything needed to resume training exactly where it stopped."""

    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    opt_m: dict[str, np.ndarray]
    opt_v: dict[str, np.ndarray]
    opt_t: int
    sched_state: dict
    epoch: int
    best_metric: float
    best_epoch: int
    rng: dict = field(default_factory=dict)  # {"seed": int}; streams are counter-derived


@dataclass
class Checkpoint:
    model_config: QuartzConfig
    train_config: dict
    state: TrainState


def save_checkpoint(path: str | Path, model_config: QuartzConfig,
                    train_config: dict, state: TrainState) -> None:
    path = Path(path)
    table = []
    payload = bytearray()
    for section, tensors in (
        ("param", state.params),
        ("buffer", state.buffers),
        ("opt_m", state.opt_m),
        ("opt_v", state.opt_v),
    ):
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr)
            table.append(
                {"name": name, "section": section, "dtype": arr.dtype.str, "shape": list(arr.shape)}
            )
            payload.extend(arr.tobytes())
    meta = {
        "model_config": model_config.to_dict(),
        "train_config": train_config,
        "epoch": state.epoch,
        "best_metric": state.best_metric,
        "best_epoch": state.best_epoch,
        "sched_state": state.sched_state,
        "rng": state.rng,
        "opt_t": state.opt_t,
        "tensors": table,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<I", len(meta_bytes)))
        f.write(meta_bytes)
        f.write(bytes(payload))
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<I", blob, 8)
    try:
        meta = json.loads(blob[12 : 12 + meta_len].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint metadata: {exc}") from exc

    model_config = QuartzConfig.from_dict(meta["model_config"])
    expected_params = param_shapes(model_config)
    expected_buffers = buffer_shapes(model_config)

    sections: dict[str, dict[str, np.ndarray]] = {s: {} for s in _SECTIONS}
    offset = 12 + meta_len
    for entry in meta["tensors"]:
        section, name = entry["section"], entry["name"]
        if section not in _SECTIONS:
            raise CheckpointError(f"{path}: unknown tensor section {section!r}")
        shape = tuple(entry["shape"])
        expected = expected_buffers if section == "buffer" else expected_params
        if name not in expected or expected[name] != shape:
            raise CheckpointError(
                f"{path}: tensor {name!r} ({section}) has shape {shape}, "
                f"model config expects {expected.get(name)}"
            )
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(blob):
            raise CheckpointError(f"{path}: payload truncated at tensor {name!r}")
        sections[section][name] = (
            np.frombuffer(blob, dtype=dtype, count=count, offset=offset).reshape(shape).copy()
        )
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes after tensor payload")
    for section, expected in (("param", expected_params), ("buffer", expected_buffers)):
        missing = set(expected) - set(sections[section])
        if missing:
            raise CheckpointError(f"{path}: checkpoint lacks {section} tensors {sorted(missing)}")

    state = TrainState(
        params=sections["param"],
        buffers=sections["buffer"],
        opt_m=sections["opt_m"],
        opt_v=sections["opt_v"],
        opt_t=meta["opt_t"],
        sched_state=meta["sched_state"],
        epoch=meta["epoch"],
        best_metric=meta["best_metric"],
        best_epoch=meta["best_epoch"],
        rng=meta.get("rng", {}),
    )
    return Checkpoint(model_config=model_config, train_config=meta["train_config"], state=state)
