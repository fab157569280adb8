"""Render run artifacts into tables and plots.

From a run directory's event log and final metrics this produces a markdown
report with a four-metric summary table (accuracy, precision, recall, F1),
a confusion-matrix rendering, and loss/accuracy-versus-epoch plot images.
A second run can be supplied for a side-by-side comparison table.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .errors import DataError  # noqa: E402
from .events import EVENTS_FILENAME, read_events  # noqa: E402
from .metrics import MetricsReport  # noqa: E402

METRICS_FILENAME = "metrics.json"

FOUR_METRICS = ("Accuracy", "Precision", "Recall", "F1-Score")


def load_run(run_dir: str | Path) -> tuple[list[dict], dict[str, MetricsReport]]:
    run_dir = Path(run_dir)
    events_path = run_dir / EVENTS_FILENAME
    if not events_path.exists():
        raise DataError(f"missing event log: expected {events_path}")
    metrics_path = run_dir / METRICS_FILENAME
    if not metrics_path.exists():
        raise DataError(f"missing final metrics: expected {metrics_path}")
    events = read_events(events_path)
    raw = json.loads(metrics_path.read_text(encoding="utf-8"))
    reports = {split: MetricsReport.from_dict(d) for split, d in raw.items()}
    return events, reports


def _row(label: str, report: MetricsReport) -> str:
    cells = (report.accuracy, report.macro_precision, report.macro_recall, report.macro_f1)
    return "| " + label + " | " + " | ".join(f"{100 * c:.2f}" for c in cells) + " |"


def four_metric_table(rows: list[tuple[str, MetricsReport]]) -> str:
    lines = [
        "| Run | " + " | ".join(FOUR_METRICS) + " |",
        "|---" * 5 + "|",
    ]
    lines += [_row(label, report) for label, report in rows]
    return "\n".join(lines)


def confusion_text(report: MetricsReport, label_names: list[str] | None = None) -> str:
    cm = report.confusion
    n = cm.shape[0]
    names = label_names if label_names else [str(i) for i in range(n)]
    width = max(max(len(s) for s in names), len(str(cm.max())))
    header = " " * (width + 2) + " ".join(f"{s:>{width}}" for s in names)
    lines = [header]
    for i in range(n):
        lines.append(
            f"{names[i]:>{width}}: " + " ".join(f"{cm[i, j]:>{width}}" for j in range(n))
        )
    return "\n".join(lines)


def _plot_curves(events: list[dict], key: str, out_path: Path, title: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for split in ("train", "test"):
        pts = [(e["epoch"], e[key]) for e in events if e["split"] == split]
        if pts:
            xs, ys = zip(*sorted(pts))
            ax.plot(xs, ys, marker="o", markersize=3, label=split)
    ax.set_xlabel("epoch")
    ax.set_ylabel(key)
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)


def _plot_confusion(report: MetricsReport, out_path: Path,
                    label_names: list[str] | None = None) -> None:
    cm = report.confusion
    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.imshow(cm, cmap="Blues")
    n = cm.shape[0]
    names = label_names if label_names else [str(i) for i in range(n)]
    ax.set_xticks(range(n), names, rotation=45, ha="right")
    ax.set_yticks(range(n), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    threshold = cm.max() / 2 if cm.max() else 0.5
    for i in range(n):
        for j in range(n):
            ax.text(j, i, str(cm[i, j]), ha="center", va="center",
                    color="white" if cm[i, j] > threshold else "black", fontsize=8)
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)


def render_report(
    run_dir: str | Path,
    out_dir: str | Path | None = None,
    compare: str | Path | None = None,
    labels: tuple[str, str] | None = None,
) -> Path:
    """Write report.md plus plot images; returns the report path."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir is not None else run_dir / "report"
    out_dir.mkdir(parents=True, exist_ok=True)
    events, reports = load_run(run_dir)

    label_names = None
    manifest_path = run_dir / "manifest.json"
    if manifest_path.exists():
        cfg = json.loads(manifest_path.read_text(encoding="utf-8")).get("config", {})
        label_names = cfg.get("label_names")

    main_label = labels[0] if labels else run_dir.name
    split_rows = [(f"{main_label} ({split})", rep) for split, rep in sorted(reports.items())]

    sections = ["# Run report", "", f"Run directory: `{run_dir}`", ""]
    sections += ["## Metrics by split", "", four_metric_table(split_rows), ""]

    if compare is not None:
        other_dir = Path(compare)
        _, other_reports = load_run(other_dir)
        other_label = labels[1] if labels else other_dir.name
        comparison = []
        for label, reps in ((main_label, reports), (other_label, other_reports)):
            if "test" in reps:
                comparison.append((label, reps["test"]))
        sections += ["## Comparison (test split)", "", four_metric_table(comparison), ""]

    test_report = reports.get("test") or next(iter(reports.values()))
    sections += ["## Confusion matrix (test split)", "", "```",
                 confusion_text(test_report, label_names), "```", ""]

    _plot_curves(events, "loss", out_dir / "loss.png", "loss per epoch")
    _plot_curves(events, "accuracy", out_dir / "accuracy.png", "accuracy per epoch")
    _plot_confusion(test_report, out_dir / "confusion.png", label_names)
    sections += [
        "## Plots",
        "",
        "![loss](loss.png)",
        "![accuracy](accuracy.png)",
        "![confusion](confusion.png)",
        "",
    ]

    report_path = out_dir / "report.md"
    report_path.write_text("\n".join(sections), encoding="utf-8")
    return report_path
