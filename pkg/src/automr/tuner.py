"""Sequential model-based hyperparameter optimization.

The loop seeds itself with a Latin-hypercube initial design, then fits a
random-forest surrogate to (encoded config -> objective) and proposes the
candidate with the highest expected improvement over the incumbent, from a
pool of random and perturbed-incumbent candidates. Every sixth model-based
suggestion is replaced by a pure-random one to keep exploring. Failed and
anomalous trials stay in the history with objective 0 so the surrogate
learns to avoid the regions that produced them.

Trials persist to an append-only newline-delimited JSON store: one study
header line, then one TrialRecord per line. Reruns against the same store
resume exactly where the last run stopped.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from sklearn.ensemble import RandomForestRegressor

from .container import TEST, TRAIN, WindowedDataset
from .errors import AutoMRError, ConfigError, StoreError
from .model import build
from .rng import derive_seed, rng_for
from .space import ParamSpace, config_to_model, config_to_train
from .trainer import train

log = logging.getLogger(__name__)

N_INIT = 8
N_CANDIDATES = 500
EI_JITTER = 0.01
RANDOM_INTERLEAVE = 6  # every 6th post-init suggestion is pure random
VALIDATION_FRACTION = 0.2

TRIAL_STATUSES = ("ok", "failed", "anomaly")


@dataclass
class TrialRecord:
    index: int
    config: dict
    objective: float | None
    budget: int
    seed: int
    status: str
    wall_s: float

    def validate(self) -> "TrialRecord":
        if self.status not in TRIAL_STATUSES:
            raise StoreError(f"trial {self.index}: unknown status {self.status!r}")
        if (self.objective is None) == (self.status == "ok"):
            raise StoreError(
                f"trial {self.index}: objective must be present exactly when status is ok"
            )
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrialRecord":
        try:
            rec = cls(
                index=d["index"],
                config=d["config"],
                objective=d["objective"],
                budget=d["budget"],
                seed=d["seed"],
                status=d["status"],
                wall_s=d["wall_s"],
            )
        except (KeyError, TypeError) as exc:
            raise StoreError(f"malformed trial record: {exc}") from exc
        return rec.validate()


class Surrogate:
    """Bagged regression-tree ensemble with per-query mean and variance.

    With fewer than two observations the surrogate abstains and the caller
    falls back to random sampling.
    """

    N_TREES = 16
    MAX_DEPTH = 8

    def __init__(self, seed: int = 0) -> None:
        self._forest = RandomForestRegressor(
            n_estimators=self.N_TREES,
            max_depth=self.MAX_DEPTH,
            bootstrap=True,
            random_state=seed,
        )
        self._fitted = False

    def fit(self, features: np.ndarray, objectives: np.ndarray) -> "Surrogate":
        if len(features) < 2:
            raise ConfigError("surrogate needs at least 2 observations")
        self._forest.fit(features, objectives)
        self._fitted = True
        return self

    def predict(self, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if not self._fitted:
            raise ConfigError("surrogate is not fitted")
        per_tree = np.stack([t.predict(features) for t in self._forest.estimators_])
        return per_tree.mean(axis=0), per_tree.var(axis=0)


def expected_improvement(
    mean: np.ndarray, var: np.ndarray, incumbent: float, xi: float = EI_JITTER
) -> np.ndarray:
    """EI for maximization; exactly max(mean - incumbent - xi, 0) at zero variance."""
    std = np.sqrt(var)
    gap = mean - incumbent - xi
    ei = np.where(std > 0, 0.0, np.maximum(gap, 0.0))
    pos = std > 0
    if pos.any():
        z = gap[pos] / std[pos]
        cdf = 0.5 * (1.0 + _erf(z / math.sqrt(2.0)))
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        ei[pos] = gap[pos] * cdf + std[pos] * pdf
    return ei


def _erf(x: np.ndarray) -> np.ndarray:
    return np.vectorize(math.erf)(x)


def _latin_hypercube(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """n stratified rows in [0, 1)^d."""
    u = rng.random((n, d))
    bins = np.stack([rng.permutation(n) for _ in range(d)], axis=1)
    return (bins + u) / n


def _objective_values(history: list[TrialRecord]) -> np.ndarray:
    return np.array(
        [t.objective if t.status == "ok" else 0.0 for t in history], dtype=np.float64
    )


def _perturb(config: dict, space: ParamSpace, rng: np.random.Generator) -> dict:
    u = space.encode_unit(config)
    out = u.copy()
    sigma = rng.choice((0.02, 0.1, 0.25))
    for i, dim in enumerate(space.dims):
        if hasattr(dim, "choices"):
            if rng.random() < 0.2:
                out[i] = rng.random()
        else:
            out[i] = float(np.clip(u[i] + rng.normal(0.0, sigma), 0.0, 1.0 - 1e-12))
    return space.decode_unit(out)


def suggest(
    history: list[TrialRecord],
    space: ParamSpace,
    seed: int,
    n_init: int = N_INIT,
) -> dict:
    """Next configuration to evaluate; a pure function of (history, space, seed)."""
    i = len(history)
    if space.is_single_point():
        log.warning("search space has a single point; suggesting it")
        return space.decode_unit(np.zeros(len(space)))
    if i == 0 and space.defaults is not None:
        return dict(space.defaults)
    if i < n_init:
        design = _latin_hypercube(n_init, len(space), rng_for(seed, "init-design"))
        return space.decode_unit(design[i])

    rng = rng_for(seed, "suggest", i)
    usable = [t for t in history if t.status in TRIAL_STATUSES]
    if len(usable) < 2 or (i - n_init) % RANDOM_INTERLEAVE == RANDOM_INTERLEAVE - 1:
        return space.sample(rng)

    feats = np.stack([space.features(t.config) for t in usable])
    objectives = _objective_values(usable)
    surrogate = Surrogate(seed=derive_seed(seed, "forest", i)).fit(feats, objectives)
    incumbent_value = float(objectives.max())
    incumbent_config = usable[int(objectives.argmax())].config

    n_half = N_CANDIDATES // 2
    candidates = [space.sample(rng) for _ in range(n_half)]
    candidates += [_perturb(incumbent_config, space, rng) for _ in range(N_CANDIDATES - n_half)]
    cand_feats = np.stack([space.features(c) for c in candidates])
    mean, var = surrogate.predict(cand_feats)
    ei = expected_improvement(mean, var, incumbent_value)
    return candidates[int(ei.argmax())]


# ---------------------------------------------------------------------------
# trial store
# ---------------------------------------------------------------------------


def _store_header(space: ParamSpace, seed: int, context: dict) -> dict:
    return {"kind": "study", "space": space.to_dict(), "seed": seed, **context}


def read_store(path: str | Path) -> tuple[dict, list[TrialRecord]]:
    """Parse a store file into (header, records); any damage refuses the resume."""
    path = Path(path)
    try:
        lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    except OSError as exc:
        raise StoreError(f"cannot read trial store {path}: {exc}") from exc
    if not lines:
        raise StoreError(f"{path}: empty trial store")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise StoreError(f"{path}:1: corrupt store header: {exc}") from exc
    if header.get("kind") != "study":
        raise StoreError(f"{path}: not a trial store (missing study header)")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            records.append(TrialRecord.from_dict(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise StoreError(f"{path}:{lineno}: corrupt trial record: {exc}") from exc
    for i, rec in enumerate(records):
        if rec.index != i:
            raise StoreError(f"{path}: trial indices not contiguous at position {i} (got {rec.index})")
    return header, records


def _append_line(path: Path, text: str) -> None:
    with open(path, "a", encoding="utf-8") as f:
        f.write(text + "\n")


# ---------------------------------------------------------------------------
# studies
# ---------------------------------------------------------------------------


def carve_validation(dataset: WindowedDataset, fraction: float = VALIDATION_FRACTION,
                     seed: int = 0) -> WindowedDataset:
    """Tuning dataset: a validation share of the train split becomes the
    scored split and the real test split is dropped entirely."""
    train_idx = dataset.indices("train")
    if len(train_idx) < 2:
        raise ConfigError("cannot carve a validation split from fewer than 2 train windows")
    n_val = min(max(int(round(fraction * len(train_idx))), 1), len(train_idx) - 1)
    perm = rng_for(seed, "validation-carve").permutation(len(train_idx))
    val = train_idx[perm[:n_val]]
    keep = np.concatenate([train_idx[perm[n_val:]], val])
    tags = np.concatenate(
        [np.full(len(train_idx) - n_val, TRAIN, dtype=np.uint8),
         np.full(n_val, TEST, dtype=np.uint8)]
    )
    order = np.argsort(keep, kind="stable")
    keep, tags = keep[order], tags[order]
    return WindowedDataset(
        schema=dataset.schema,
        windows=dataset.windows[keep],
        labels=dataset.labels[keep],
        split=tags,
        recording_ids=dataset.recording_ids,
        provenance_rec=dataset.provenance_rec[keep],
        provenance_start=dataset.provenance_start[keep],
        normalized=dataset.normalized,
    )


def _train_objective(dataset: WindowedDataset, epochs: int):
    tune_ds = None

    def objective(config: dict, trial_seed: int, study_seed: int) -> float:
        nonlocal tune_ds
        if tune_ds is None:
            tune_ds = carve_validation(dataset, VALIDATION_FRACTION, study_seed)
        model_cfg = config_to_model(config, tune_ds.num_channels, tune_ds.schema.num_classes)
        train_cfg = config_to_train(config, epochs, trial_seed)
        model = build(model_cfg, seed=trial_seed)
        best_state, _ = train(model, tune_ds, train_cfg)
        return best_state.best_metric

    return objective


def incumbent_of(records: list[TrialRecord]) -> TrialRecord | None:
    ok = [t for t in records if t.status == "ok"]
    if not ok:
        return None
    return max(ok, key=lambda t: (t.objective, -t.index))


def run_study(
    dataset: WindowedDataset,
    space: ParamSpace,
    n_trials: int,
    epochs_per_trial: int,
    seed: int,
    store_path: str | Path,
    fresh: bool = False,
    objective_fn=None,
) -> TrialRecord:
    """Run (or resume) a study of `n_trials` trials, persisting each one.

    The objective is validation accuracy on a carve-out of the train split;
    the dataset's test split is never read. Returns the incumbent record.
    """
    if n_trials < 1:
        raise ConfigError(f"n_trials must be >= 1, got {n_trials}")
    store_path = Path(store_path)
    header = _store_header(space, seed, {"epochs_per_trial": epochs_per_trial})
    records: list[TrialRecord] = []
    if store_path.exists() and not fresh:
        stored_header, records = read_store(store_path)
        if stored_header.get("space") != header["space"] or stored_header.get("seed") != seed:
            raise StoreError(
                f"{store_path}: store belongs to a different study (space or seed differ); "
                "pass fresh=True / --fresh to start over"
            )
    else:
        store_path.parent.mkdir(parents=True, exist_ok=True)
        store_path.write_text(json.dumps(header, sort_keys=True) + "\n", encoding="utf-8")

    if objective_fn is None:
        objective_fn = _train_objective(dataset, epochs_per_trial)

    for i in range(len(records), n_trials):
        config = suggest(records, space, seed)
        trial_seed = derive_seed(seed, "trial", i)
        t0 = time.perf_counter()
        status, objective = "ok", None
        try:
            objective = float(objective_fn(config, trial_seed, seed))
        except AnomalyError as exc:
            status = "anomaly"
            log.warning("trial %d anomalous: %s", i, exc)
        except AutoMRError as exc:
            status = "failed"
            log.warning("trial %d failed: %s", i, exc)
        record = TrialRecord(
            index=i,
            config=config,
            objective=objective,
            budget=epochs_per_trial,
            seed=trial_seed,
            status=status,
            wall_s=time.perf_counter() - t0,
        ).validate()
        _append_line(store_path, record.to_json())
        records.append(record)
        shown = f"{objective:.4f}" if objective is not None else status
        log.info("trial %d/%d: objective %s", i + 1, n_trials, shown)

    best = incumbent_of(records)
    if best is None:
        raise StoreError(f"study produced no successful trials (see {store_path})")
    return best


def manual_grid_study(
    dataset: WindowedDataset,
    space: ParamSpace,
    grid_dim: str,
    epochs_per_trial: int,
    seed: int,
    store_path: str | Path,
    fresh: bool = False,
    objective_fn=None,
) -> TrialRecord:
    """Ablation runner: sweep one categorical dimension, defaults elsewhere."""
    if space.defaults is None:
        raise ConfigError("manual grid needs a space with defaults")
    dim = next((d for d in space.dims if d.name == grid_dim), None)
    if dim is None or not hasattr(dim, "choices"):
        raise ConfigError(f"manual grid dimension {grid_dim!r} is not a categorical dimension")

    store_path = Path(store_path)
    header = _store_header(space, seed, {"epochs_per_trial": epochs_per_trial,
                                         "manual_grid": grid_dim})
    records: list[TrialRecord] = []
    if store_path.exists() and not fresh:
        stored_header, records = read_store(store_path)
        if stored_header.get("manual_grid") != grid_dim:
            raise StoreError(f"{store_path}: store is not a manual-grid study over {grid_dim!r}")
    else:
        store_path.parent.mkdir(parents=True, exist_ok=True)
        store_path.write_text(json.dumps(header, sort_keys=True) + "\n", encoding="utf-8")

    if objective_fn is None:
        objective_fn = _train_objective(dataset, epochs_per_trial)

    for i in range(len(records), len(dim.choices)):
        config = dict(space.defaults)
        config[grid_dim] = dim.choices[i]
        trial_seed = derive_seed(seed, "trial", i)
        t0 = time.perf_counter()
        status, objective = "ok", None
        try:
            objective = float(objective_fn(config, trial_seed, seed))
        except AnomalyError as exc:
            status = "anomaly"
            log.warning("grid trial %d anomalous: %s", i, exc)
        except AutoMRError as exc:
            status = "failed"
            log.warning("grid trial %d failed: %s", i, exc)
        record = TrialRecord(
            index=i, config=config, objective=objective, budget=epochs_per_trial,
            seed=trial_seed, status=status, wall_s=time.perf_counter() - t0,
        ).validate()
        _append_line(store_path, record.to_json())
        records.append(record)

    best = incumbent_of(records)
    if best is None:
        raise StoreError(f"manual grid produced no successful trials (see {store_path})")
    return best


def export_best(store_path: str | Path, out_path: str | Path,
                in_channels: int, num_classes: int) -> dict:
    """Write the incumbent as a merged model+train config consumable by training."""
    header, records = read_store(store_path)
    best = incumbent_of(records)
    if best is None:
        raise StoreError(f"{store_path}: no successful trials to export")
    epochs = header.get("epochs_per_trial", 15)
    merged = {
        "model": config_to_model(best.config, in_channels, num_classes).to_dict(),
        "train": config_to_train(best.config, epochs, best.seed).to_dict(),
        "provenance": {
            "study_seed": header.get("seed"),
            "trial_index": best.index,
            "objective": best.objective,
        },
    }
    out_path = Path(out_path)
    out_path.write_text(json.dumps(merged, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return merged
