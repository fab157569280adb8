"""Command-line entry point: prepare / train / tune / evaluate / report.

Exit codes: 0 success, 1 usage error, 2 invalid input (schema, config,
checkpoint, store), 3 runtime failure (anomaly termination, I/O). Every run
writes a manifest recording the command, resolved configuration and seeds.
The AUTOMR_SEED environment variable supplies the seed wherever --seed is
omitted.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .container import WindowedDataset
from .errors import AnomalyError, AutoMRError, CheckpointError, ConfigError, DataError, StoreError
from .events import EVENTS_FILENAME, EventLog
from .manifest import MANIFEST_FILENAME, RunManifest
from .model import PRESETS, QuartzConfig, build, count_params, preset, receptive_field
from .pipeline import prepare as prepare_pipeline
from .report import METRICS_FILENAME, four_metric_table, render_report
from .schema import DatasetSchema
from .space import ParamSpace, default_space
from .trainer import TrainConfig, evaluate, train
from .tuner import export_best, manual_grid_study, run_study

log = logging.getLogger(__name__)


@contextmanager
def _manifest(path: Path, args_ns, config: dict, seeds: dict):
    manifest = RunManifest(
        path,
        command=list(getattr(args_ns, "_argv", sys.argv)),
        config=config,
        seeds=seeds,
    ).start()
    try:
        yield manifest
    except BaseException:
        manifest.finalize("error")
        raise
    else:
        manifest.finalize("ok")


def _load_dataset(path: str) -> WindowedDataset:
    return WindowedDataset.load(path)


def _resolve_seed(flag_value: int | None, default: int = 0) -> int:
    """--seed beats AUTOMR_SEED beats the default."""
    if flag_value is not None:
        return flag_value
    env = os.environ.get("AUTOMR_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"AUTOMR_SEED must be an integer, got {env!r}") from None
    return default


def _read_json(path: str, what: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {what} is not valid JSON: {exc}") from exc


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_prepare(args) -> int:
    schema = DatasetSchema.load(args.schema)
    seed = _resolve_seed(args.seed)
    out_path = Path(args.output)
    manifest_path = Path(str(out_path) + ".manifest.json")
    with _manifest(
        manifest_path, args,
        config={"schema": schema.to_dict(), "split_mode": args.split_mode,
                "labeling": args.labeling, "input": str(args.input)},
        seeds={"seed": seed},
    ) as manifest:
        ds, summary = prepare_pipeline(
            args.input, schema, seed=seed,
            split_mode=args.split_mode, labeling=args.labeling,
        )
        ds.save(out_path)
        manifest.add_artifact("dataset", out_path)
        counts = ds.class_counts()
        print(
            f"prepared {len(ds)} windows from {summary.recordings} recordings "
            f"({len(summary.skipped)} skipped as too short)"
        )
        print(f"  train/test: {len(ds.indices('train'))}/{len(ds.indices('test'))}")
        print(f"  class counts: {dict(zip(schema.label_names, counts.tolist()))}")
        print(f"  wrote {out_path}")
    return 0


def _resolve_train_setup(args, dataset: WindowedDataset):
    """Model + train configs from --config, --model or --preset, with flag overrides."""
    schema = dataset.schema
    if args.config:
        merged = _read_json(args.config, "merged config")
        if "model" not in merged or "train" not in merged:
            raise ConfigError(f"{args.config}: merged config needs 'model' and 'train' sections")
        model_cfg = QuartzConfig.from_dict(merged["model"])
        train_cfg = TrainConfig.from_dict(merged["train"])
    else:
        if args.model:
            model_cfg = QuartzConfig.from_dict(_read_json(args.model, "model config"))
        else:
            model_cfg = preset(args.preset, dataset.num_channels, schema.num_classes)
        train_cfg = TrainConfig(epochs=args.epochs if args.epochs is not None else 30)

    if args.epochs is not None:
        train_cfg.epochs = args.epochs
    if args.lr is not None:
        train_cfg.learning_rate = args.lr
    if args.batch is not None:
        train_cfg.batch_size = args.batch
    if args.weight_decay is not None:
        train_cfg.weight_decay = args.weight_decay
    if args.scheduler is not None:
        train_cfg.scheduler = args.scheduler
    train_cfg.seed = _resolve_seed(args.seed, default=train_cfg.seed)
    train_cfg.validate()

    if model_cfg.in_channels != dataset.num_channels:
        raise ConfigError(
            f"model config expects {model_cfg.in_channels} channels, "
            f"dataset {schema.name!r} has {dataset.num_channels}"
        )
    if model_cfg.num_classes != schema.num_classes:
        raise ConfigError(
            f"model config expects {model_cfg.num_classes} classes, "
            f"dataset {schema.name!r} has {schema.num_classes}"
        )
    return model_cfg, train_cfg


def cmd_train(args) -> int:
    dataset = _load_dataset(args.data)
    model_cfg, train_cfg = _resolve_train_setup(args, dataset)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    rf = receptive_field(model_cfg)
    if dataset.window_length < rf:
        log.warning(
            "window length %d is below the model receptive field %d",
            dataset.window_length, rf,
        )

    with _manifest(
        out_dir / MANIFEST_FILENAME, args,
        config={
            "data": str(args.data),
            "model": model_cfg.to_dict(),
            "train": train_cfg.to_dict(),
            "label_names": dataset.schema.label_names,
            "parameters": count_params(model_cfg),
        },
        seeds={"seed": train_cfg.seed},
    ) as manifest:
        model = build(model_cfg, seed=train_cfg.seed)
        resume = None
        if args.resume:
            ck = load_checkpoint(args.resume)
            if ck.model_config.to_dict() != model_cfg.to_dict():
                raise CheckpointError(
                    f"{args.resume}: checkpoint model config does not match the requested one"
                )
            resume = ck.state
        events = EventLog(out_dir / EVENTS_FILENAME)
        best_state, records = train(
            model, dataset, train_cfg, out_dir=out_dir, resume=resume, events=events
        )
        if not (out_dir / "best.ckpt").exists():  # 0-epoch runs never improve
            save_checkpoint(out_dir / "best.ckpt", model_cfg, train_cfg.to_dict(), best_state)

        # score best.ckpt (the cross-session best) on both splits for the report
        best_ck = load_checkpoint(out_dir / "best.ckpt")
        model.load_arrays(best_ck.state.params, best_ck.state.buffers)
        final = {
            "train": evaluate(model, dataset, "train").to_dict(),
            "test": evaluate(model, dataset, "test").to_dict(),
        }
        (out_dir / METRICS_FILENAME).write_text(
            json.dumps(final, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        manifest.add_artifact("checkpoint", out_dir / "best.ckpt")
        manifest.add_artifact("events", out_dir / EVENTS_FILENAME)
        manifest.add_artifact("metrics", out_dir / METRICS_FILENAME)

        if records:
            print(
                f"trained {len(records)} epochs; best test accuracy "
                f"{best_state.best_metric:.4f} at epoch {best_state.best_epoch}"
            )
        else:
            print("no epochs requested; wrote initial state")
        print(f"  run directory: {out_dir}")
    return 0


def cmd_tune(args) -> int:
    dataset = _load_dataset(args.data)
    space = ParamSpace.load(args.space) if args.space else default_space(dataset.num_channels)
    seed = _resolve_seed(args.seed)
    store_path = Path(args.store)
    manifest_path = Path(str(store_path) + ".manifest.json")
    with _manifest(
        manifest_path, args,
        config={"data": str(args.data), "space": space.to_dict(),
                "trials": args.trials, "epochs_per_trial": args.epochs_per_trial,
                "manual_grid": args.manual_grid},
        seeds={"seed": seed},
    ) as manifest:
        if args.manual_grid:
            best = manual_grid_study(
                dataset, space, args.manual_grid, args.epochs_per_trial,
                seed, store_path, fresh=args.fresh,
            )
        else:
            best = run_study(
                dataset, space, args.trials, args.epochs_per_trial,
                seed, store_path, fresh=args.fresh,
            )
        manifest.add_artifact("store", store_path)
        print(f"best trial #{best.index}: objective {best.objective:.4f}")
        print(f"  config: {json.dumps(best.config, sort_keys=True)}")
        if args.export:
            export_best(store_path, args.export, dataset.num_channels,
                        dataset.schema.num_classes)
            manifest.add_artifact("exported_config", args.export)
            print(f"  exported merged config to {args.export}")
    return 0


def cmd_evaluate(args) -> int:
    dataset = _load_dataset(args.data)
    ck = load_checkpoint(args.checkpoint)
    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)
    with _manifest(
        out_dir / MANIFEST_FILENAME, args,
        config={"checkpoint": str(args.checkpoint), "data": str(args.data),
                "split": args.split, "label_names": dataset.schema.label_names},
        seeds={},
    ) as manifest:
        model = build(ck.model_config, seed=0)
        model.load_arrays(ck.state.params, ck.state.buffers)
        report = evaluate(model, dataset, args.split)
        (out_dir / METRICS_FILENAME).write_text(
            json.dumps({args.split: report.to_dict()}, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        manifest.add_artifact("metrics", out_dir / METRICS_FILENAME)
        print(four_metric_table([(f"{Path(args.checkpoint).name} ({args.split})", report)]))
        print(f"\n  loss {report.loss:.4f} on {int(report.support.sum())} windows")
        print(f"  wrote {out_dir / METRICS_FILENAME}")
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    out_dir = Path(args.out) if args.out else run_dir / "report"
    labels = tuple(args.labels.split(",")) if args.labels else None
    if labels is not None and len(labels) != 2:
        raise ConfigError(f"--labels wants two comma-separated names, got {args.labels!r}")
    with _manifest(
        out_dir / MANIFEST_FILENAME, args,
        config={"run": str(run_dir), "compare": str(args.compare) if args.compare else None},
        seeds={},
    ) as manifest:
        report_path = render_report(run_dir, out_dir=out_dir, compare=args.compare, labels=labels)
        manifest.add_artifact("report", report_path)
        print(report_path.read_text(encoding="utf-8"))
        print(f"wrote {report_path}")
    return 0


# ---------------------------------------------------------------------------
# parser and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="automr",
        description="windowed sensor time-series classification pipeline",
    )
    parser.add_argument("--version", action="version", version=f"automr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="ingest CSV recordings into a windowed dataset container")
    p.add_argument("--schema", required=True, help="schema.json describing the dataset")
    p.add_argument("--input", required=True, help="directory of CSV recordings")
    p.add_argument("--output", required=True, help="output .awd container path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--split-mode", choices=("by-window", "by-recording"), default="by-window")
    p.add_argument("--labeling", choices=("majority", "last-sample"), default="majority")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model on a prepared dataset")
    p.add_argument("--data", required=True, help=".awd dataset container")
    p.add_argument("--model", help="model config JSON")
    p.add_argument("--preset", choices=PRESETS, default="base")
    p.add_argument("--config", help="merged model+train config (from tune --export)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--scheduler", choices=("cosine", "plateau", "none"))
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tune", help="sequential model-based hyperparameter search")
    p.add_argument("--data", required=True)
    p.add_argument("--trials", type=int, default=12)
    p.add_argument("--epochs-per-trial", type=int, default=15)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--store", required=True, help="append-only NDJSON trial store")
    p.add_argument("--space", help="space definition JSON (defaults to the stock space)")
    p.add_argument("--manual-grid", help="sweep one categorical dimension instead (ablation)")
    p.add_argument("--fresh", action="store_true", help="ignore an existing store")
    p.add_argument("--export", help="write the best merged config to this path")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--out", help="output directory (default: <checkpoint dir>/eval)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render tables and plots from a run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--compare", help="second run directory for a side-by-side table")
    p.add_argument("--labels", help="comma-separated labels for the two runs")
    p.add_argument("--out", help="output directory (default: <run>/report)")
    p.set_defaults(func=cmd_report)
    return parser


def dispatch(argv: list[str] | None = None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 0 for --version/--help, 2 for usage
        return 0 if exc.code == 0 else 1
    args._argv = ["automr"] + list(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, CheckpointError, StoreError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AnomalyError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return 3
    except AutoMRError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
