"""Session evaluation, aggregate metrics, and artifact emission (CSV/JSON/SVG)."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numeric import SeededRng, derive_seed

EVAL_BATCH = 512


@dataclass(frozen=True)
class SessionReport:
    """Accuracy over all classes seen after one session."""

    task_index: int
    accuracy_seen: float
    per_class_accuracy: dict[int, float]
    epoch_losses: tuple[float, ...] = ()
    n_test: int = 0


@dataclass(frozen=True)
class RunSummary:
    reports: tuple[SessionReport, ...]
    average_accuracy: float
    last_accuracy: float
    config_hash: str = ""


def evaluate(model, stream, upto_task: int) -> SessionReport:
    """Accuracy on the union of test sets of tasks 1..upto_task.

    Deterministic: the mean noise path is used unless the model asked for
    stochastic evaluation, in which case draws come from a seed derived from
    the model's evaluation seed and the session index. Never mutates the
    model.
    """
    if upto_task < 1 or upto_task > model.sessions_completed:
        raise ValueError(
            f"cannot evaluate at task {upto_task}; model has completed {model.sessions_completed}"
        )
    if model.classifier.num_classes < 1:
        raise ValueError("classifier has no trained classes")
    expected = sum(len(stream.tasks[i].test) for i in range(upto_task))
    correct: dict[int, int] = {}
    total: dict[int, int] = {}
    n_seen = 0
    n_correct = 0
    rng = SeededRng(derive_seed(model.eval_seed, "session", upto_task))
    for i in range(upto_task):
        x, y = stream.tasks[i].test_arrays()
        for start in range(0, len(y), EVAL_BATCH):
            xb = x[start : start + EVAL_BATCH]
            yb = y[start : start + EVAL_BATCH]
            feats = model.features(xb, rng=rng.split("batch", i, start), eval_mode=True)
            pred = model.classifier.predict_labels(feats)
            for label, hit in zip(yb, pred == yb):
                c = int(label)
                total[c] = total.get(c, 0) + 1
                correct[c] = correct.get(c, 0) + int(hit)
            n_seen += len(yb)
            n_correct += int(np.sum(pred == yb))
    if n_seen != expected:
        raise RuntimeError(f"evaluated {n_seen} samples, expected {expected}")
    per_class = {c: correct[c] / total[c] for c in sorted(total)}
    return SessionReport(
        task_index=upto_task,
        accuracy_seen=n_correct / n_seen,
        per_class_accuracy=per_class,
        n_test=n_seen,
    )


def report_to_dict(rep: SessionReport) -> dict:
    return {
        "task_index": rep.task_index,
        "accuracy_seen": rep.accuracy_seen,
        "n_test": rep.n_test,
        "per_class_accuracy": {str(c): rep.per_class_accuracy[c] for c in sorted(rep.per_class_accuracy)},
        "epoch_losses": list(rep.epoch_losses),
    }


def report_from_dict(d: dict) -> SessionReport:
    return SessionReport(
        task_index=int(d["task_index"]),
        accuracy_seen=float(d["accuracy_seen"]),
        per_class_accuracy={int(c): float(v) for c, v in d["per_class_accuracy"].items()},
        epoch_losses=tuple(float(v) for v in d["epoch_losses"]),
        n_test=int(d["n_test"]),
    )


def summarize(reports, config_hash: str = "") -> RunSummary:
    """Mean accuracy across sessions plus the final-session accuracy."""
    reports = tuple(reports)
    if not reports:
        raise ValueError("no session reports to summarize")
    for pos, rep in enumerate(reports, start=reports[0].task_index):
        if rep.task_index != pos:
            raise ValueError(f"gap in task indices at position {pos}")
    if reports[0].task_index != 1:
        raise ValueError("reports must start at task 1")
    accs = [r.accuracy_seen for r in reports]
    return RunSummary(
        reports=reports,
        average_accuracy=float(np.mean(accs)),
        last_accuracy=accs[-1],
        config_hash=config_hash,
    )


def accuracy_csv_text(summary: RunSummary) -> str:
    lines = ["task,accuracy_pct"]
    for rep in summary.reports:
        lines.append(f"{rep.task_index},{rep.accuracy_seen * 100.0:.2f}")
    return "\n".join(lines) + "\n"


def summary_json_text(summary: RunSummary) -> str:
    payload = {
        "config_hash": summary.config_hash,
        "average_accuracy": summary.average_accuracy,
        "last_accuracy": summary.last_accuracy,
        "reports": [report_to_dict(rep) for rep in summary.reports],
    }
    return json.dumps(payload, indent=2) + "\n"


def render_line_chart(
    series: list[tuple[str, list[tuple[float, float]]]],
    x_label: str,
    y_label: str,
    annotation: str = "",
    y_range: tuple[float, float] | None = None,
) -> str:
    """Static 800x500 SVG line chart, byte-stable for identical inputs."""
    width, height, margin = 800, 500, 60
    xs = [p[0] for _, pts in series for p in pts]
    ys = [p[1] for _, pts in series for p in pts]
    if not xs:
        raise ValueError("chart needs at least one point")
    x_lo, x_hi = min(xs), max(xs)
    if y_range is not None:
        y_lo, y_hi = y_range
    else:
        y_lo, y_hi = min(ys), max(ys)
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0

    def sx(x):
        return margin + (x - x_lo) / x_span * (width - 2 * margin)

    def sy(y):
        return height - margin - (y - y_lo) / y_span * (height - 2 * margin)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}">',
        f"<desc>{annotation}</desc>" if annotation else "<desc>line chart</desc>",
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{width // 2}" y="{height - 15}" text-anchor="middle" font-size="16">{x_label}</text>',
        f'<text x="18" y="{height // 2}" text-anchor="middle" font-size="16" transform="rotate(-90 18 {height // 2})">{y_label}</text>',
        f'<text x="{margin - 8}" y="{height - margin + 5}" text-anchor="end" font-size="12">{y_lo:.2f}</text>',
        f'<text x="{margin - 8}" y="{margin + 5}" text-anchor="end" font-size="12">{y_hi:.2f}</text>',
    ]
    for k, (name, pts) in enumerate(series):
        color = colors[k % len(colors)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        parts.append(
            f'<text x="{width - margin + 5}" y="{margin + 18 * k + 12}" font-size="12" fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def accuracy_svg_text(summary: RunSummary) -> str:
    points = [(float(r.task_index), r.accuracy_seen * 100.0) for r in summary.reports]
    return render_line_chart(
        [("accuracy", points)],
        x_label="session",
        y_label="accuracy (%)",
        annotation=f"config {summary.config_hash}",
        y_range=(0.0, 100.0),
    )


def emit(summary: RunSummary, out_dir: str | Path, stem: str = "accuracy") -> list[Path]:
    """Write the CSV, JSON and SVG artifacts for one run; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in (
        (f"{stem}.csv", accuracy_csv_text(summary)),
        ("summary.json", summary_json_text(summary)),
        (f"{stem}.svg", accuracy_svg_text(summary)),
    ):
        path = out / name
        path.write_text(text, encoding="utf-8")
        paths.append(path)
    return paths
