"""Training loop: cross-entropy descent with clipping, anomaly recovery,
learning-rate scheduling, best-checkpoint tracking and per-epoch telemetry.

Shuffling and dropout draw from counter-derived RNGs keyed by (seed, epoch,
step), so a run interrupted at any epoch boundary and resumed from its
checkpoint reproduces the uninterrupted trajectory bit for bit.
"""

from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import ops
from .checkpoint import TrainState, save_checkpoint
from .container import WindowedDataset
from .errors import AnomalyError, ConfigError, DataError
from .events import EventLog
from .metrics import MetricsReport
from .model import ModelInstance
from .optim import AdamW, clip_gradients, make_scheduler
from .rng import rng_for
from .tape import Tape

log = logging.getLogger(__name__)

DEFAULT_BATCH_SIZES = (32, 64, 128, 256)


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 64
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    clip_norm: float = 1.0
    scheduler: str = "cosine"
    plateau_factor: float = 0.5
    plateau_patience: int = 3
    seed: int = 0
    early_stop_patience: int | None = None
    allowed_batch_sizes: tuple[int, ...] = DEFAULT_BATCH_SIZES

    def validate(self) -> "TrainConfig":
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.allowed_batch_sizes and self.batch_size not in self.allowed_batch_sizes:
            raise ConfigError(
                f"batch_size {self.batch_size} not in allowed set {self.allowed_batch_sizes}"
            )
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.clip_norm <= 0:
            raise ConfigError(f"clip_norm must be > 0, got {self.clip_norm}")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ConfigError(f"plateau_factor must be in (0, 1), got {self.plateau_factor}")
        if self.scheduler not in ("cosine", "plateau", "none"):
            raise ConfigError(f"unknown scheduler {self.scheduler!r}")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["allowed_batch_sizes"] = list(self.allowed_batch_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        try:
            cfg = cls(
                epochs=d["epochs"],
                batch_size=d.get("batch_size", 64),
                learning_rate=d.get("learning_rate", 1e-3),
                weight_decay=d.get("weight_decay", 1e-4),
                clip_norm=d.get("clip_norm", 1.0),
                scheduler=d.get("scheduler", "cosine"),
                plateau_factor=d.get("plateau_factor", 0.5),
                plateau_patience=d.get("plateau_patience", 3),
                seed=d.get("seed", 0),
                early_stop_patience=d.get("early_stop_patience"),
                allowed_batch_sizes=tuple(d.get("allowed_batch_sizes", DEFAULT_BATCH_SIZES)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed train config: {exc}") from exc
        return cfg.validate()


@dataclass
class EpochRecord:
    epoch: int
    train: MetricsReport
    test: MetricsReport
    lr: float
    wall_ms: float


def _snapshot(model: ModelInstance, optimizer: AdamW, sched_state: dict,
              epoch: int, best_metric: float, best_epoch: int, seed: int) -> TrainState:
    opt = optimizer.state_dict()
    return TrainState(
        params={k: v.copy() for k, v in model.params.items()},
        buffers={k: v.copy() for k, v in model.buffers.items()},
        opt_m=opt["m"],
        opt_v=opt["v"],
        opt_t=opt["t"],
        sched_state=copy.deepcopy(sched_state),
        epoch=epoch,
        best_metric=best_metric,
        best_epoch=best_epoch,
        rng={"seed": seed},
    )


def _restore(model: ModelInstance, optimizer: AdamW, state: TrainState) -> None:
    for k, v in state.params.items():
        model.params[k][...] = v
    for k, v in state.buffers.items():
        model.buffers[k] = v.copy()
    optimizer.load_state_dict({"t": state.opt_t, "m": state.opt_m, "v": state.opt_v})


class _Anomaly(Exception):
    def __init__(self, what: str, epoch: int, step: int) -> None:
        super().__init__(what)
        self.what, self.epoch, self.step = what, epoch, step


def _batches(indices: np.ndarray, batch_size: int):
    for start in range(0, len(indices), batch_size):
        yield indices[start : start + batch_size]


def evaluate(
    model: ModelInstance,
    dataset: WindowedDataset,
    split: str = "test",
    batch_size: int = 256,
) -> MetricsReport:
    """Score one split in eval mode (no dropout, running-stat normalization).

    Predictions are argmax over logits, ties resolved to the lowest class id.
    """
    idx = dataset.indices(split)
    if len(idx) == 0:
        raise DataError(f"cannot evaluate: {split} split is empty")
    model.eval()
    num_classes = model.config.num_classes
    preds = np.empty(len(idx), dtype=np.int64)
    loss_sum = 0.0
    for pos in range(0, len(idx), batch_size):
        batch = idx[pos : pos + batch_size]
        logits = model.forward(dataset.windows[batch])
        loss, _ = ops.softmax_cross_entropy(logits, dataset.labels[batch], reduction="sum")
        loss_sum += float(loss)
        preds[pos : pos + len(batch)] = logits.argmax(axis=1)
    return MetricsReport.from_predictions(
        dataset.labels[idx], preds, num_classes, loss=loss_sum / len(idx)
    )


def train(
    model: ModelInstance,
    dataset: WindowedDataset,
    config: TrainConfig,
    out_dir=None,
    resume: TrainState | None = None,
    stop_epoch: int | None = None,
    events: EventLog | None = None,
) -> tuple[TrainState, list[EpochRecord]]:
    """Optimize `model` on the dataset's train split, scoring the test split
    each epoch and checkpointing whenever test accuracy strictly improves.

    `config.epochs` is the total planned horizon (the cosine schedule spans
    it); `stop_epoch` ends the session early for later resumption via
    `resume`. Returns the best state seen this session and the per-epoch
    metric log. With an `out_dir`, `best.ckpt` holds the best state across
    sessions (never overwritten without improvement) and `last.ckpt` the
    end-of-epoch state that `resume` continues from bit-identically.

    A non-finite loss or gradient aborts the epoch, restores the last
    completed epoch's state, halves the learning rate and retries once; a
    second anomaly terminates the run.
    """
    config.validate()
    if model.config.in_channels != dataset.num_channels:
        raise ConfigError(
            f"model expects {model.config.in_channels} channels, "
            f"dataset has {dataset.num_channels}"
        )
    train_idx = dataset.indices("train")
    test_idx = dataset.indices("test")
    if len(train_idx) == 0 or len(test_idx) == 0:
        raise DataError(
            f"training needs nonempty train and test splits, "
            f"got {len(train_idx)} train / {len(test_idx)} test windows"
        )
    counts = dataset.class_counts("train")
    empty = np.flatnonzero(counts == 0)
    if len(empty):
        log.warning("train split has no windows for classes %s", empty.tolist())

    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    seed = config.seed
    optimizer = AdamW(model.params, config.learning_rate, config.weight_decay)
    scheduler = make_scheduler(
        config.scheduler, config.learning_rate, config.epochs,
        config.plateau_factor, config.plateau_patience,
    )
    start_epoch = 0
    best_metric = -math.inf
    best_epoch = -1
    if resume is not None:
        _restore(model, optimizer, resume)
        scheduler.load_state_dict(resume.sched_state)
        start_epoch = resume.epoch
        best_metric = resume.best_metric
        best_epoch = resume.best_epoch

    def snap(epoch: int) -> TrainState:
        return _snapshot(model, optimizer, scheduler.state_dict(),
                         epoch, best_metric, best_epoch, seed)

    last_good = snap(start_epoch)
    best_state = copy.deepcopy(last_good)
    records: list[EpochRecord] = []
    end_epoch = config.epochs if stop_epoch is None else min(stop_epoch, config.epochs)
    num_classes = model.config.num_classes
    anomalies = 0
    stale_epochs = 0

    epoch = start_epoch
    while epoch < end_epoch:
        t0 = time.perf_counter()
        lr = scheduler.lr_for(epoch)
        optimizer.lr = lr
        try:
            perm = train_idx[rng_for(seed, "shuffle", epoch).permutation(len(train_idx))]
            model.train()
            loss_sum = 0.0
            seen = 0
            train_preds = np.empty(len(perm), dtype=np.int64)
            train_labels = np.empty(len(perm), dtype=np.int64)
            for step, batch in enumerate(_batches(perm, config.batch_size)):
                xb = dataset.windows[batch]
                yb = dataset.labels[batch]
                tape = Tape()
                logits = model.forward(xb, tape=tape, step_key=(seed, epoch, step))
                loss, _ = ops.softmax_cross_entropy(logits, yb, tape=tape)
                if not math.isfinite(float(loss)):
                    raise _Anomaly(f"non-finite loss {float(loss)}", epoch, step)
                grads_by_id = tape.gradients(loss)
                grads = {}
                for name, p in model.params.items():
                    g = grads_by_id.get(id(p))
                    grads[name] = g if g is not None else np.zeros_like(p)
                norm = clip_gradients(grads, config.clip_norm)
                if not math.isfinite(norm):
                    raise _Anomaly(f"non-finite gradient norm {norm}", epoch, step)
                optimizer.step(grads)
                loss_sum += float(loss) * len(batch)
                train_preds[seen : seen + len(batch)] = logits.argmax(axis=1)
                train_labels[seen : seen + len(batch)] = yb
                seen += len(batch)
        except _Anomaly as anomaly:
            anomalies += 1
            if anomalies >= 2:
                raise AnomalyError(
                    f"second anomaly at epoch {anomaly.epoch} step {anomaly.step}: "
                    f"{anomaly.what}; terminating"
                ) from anomaly
            log.warning(
                "anomaly at epoch %d step %d (%s): restoring last state, halving lr, retrying",
                anomaly.epoch, anomaly.step, anomaly.what,
            )
            _restore(model, optimizer, last_good)
            scheduler.load_state_dict(last_good.sched_state)
            scheduler.scale(0.5)
            continue  # retry the same epoch

        train_report = MetricsReport.from_predictions(
            train_labels, train_preds, num_classes, loss=loss_sum / seen
        )
        test_report = evaluate(model, dataset, "test")
        scheduler.observe(test_report.accuracy)
        wall_ms = (time.perf_counter() - t0) * 1000.0

        improved = test_report.accuracy > best_metric
        if improved:
            best_metric = test_report.accuracy
            best_epoch = epoch
            stale_epochs = 0
        else:
            stale_epochs += 1
        last_good = snap(epoch + 1)
        if improved:
            best_state = copy.deepcopy(last_good)
            if out_dir is not None:
                save_checkpoint(
                    Path(out_dir) / "best.ckpt", model.config, config.to_dict(), best_state
                )
        if out_dir is not None:  # end-of-epoch state, for exact resumption
            save_checkpoint(Path(out_dir) / "last.ckpt", model.config, config.to_dict(), last_good)
        records.append(EpochRecord(epoch, train_report, test_report, lr, wall_ms))
        if events is not None:
            for split_name, report in (("train", train_report), ("test", test_report)):
                events.emit(
                    {
                        "epoch": epoch,
                        "split": split_name,
                        "loss": report.loss,
                        "accuracy": report.accuracy,
                        "macro_f1": report.macro_f1,
                        "lr": lr,
                        "wall_ms": wall_ms,
                    }
                )
        epoch += 1
        if (
            config.early_stop_patience is not None
            and stale_epochs >= config.early_stop_patience
        ):
            log.info("early stop: no test-accuracy improvement in %d epochs", stale_epochs)
            break

    return best_state, records
