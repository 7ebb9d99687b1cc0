"""CSV artifacts and the figure renderings derived from them.

CSV files are the authoritative outputs; plots are a convenience and are
never read back.
"""
from __future__ import annotations

import csv
import logging
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from uivtsp.simulator import CYCLE_COLUMNS, DelayCell, MetricsSeries, quartile_means  # noqa: E402

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = (
    "scheme",
    "pct_dishonest",
    "delta_l",
    "delta_m",
    "delta_h",
    "k",
    "epsilon",
    "detection_rate",
    "false_alarm_rate",
    "leakage_probability",
    "avg_tracing_delay_us",
)
SWEEP_COLUMNS = SUMMARY_COLUMNS[:7] + ("seeds",) + SUMMARY_COLUMNS[7:]
DELAY_COLUMNS = (
    "k",
    "epsilon",
    "rounds",
    "mean_delay_us",
    "median_delay_us",
    "hash_invocations_per_round",
    "trace_bytes_per_round",
)

# PNG metadata otherwise embeds the matplotlib version
_PNG_METADATA = {"Software": None}


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def _write(path: Path, columns: Sequence[str], rows: Iterable[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(row[c]) for c in columns])
    logger.info("Wrote %s", path)
    return path


def read_csv(path: Path) -> list[dict[str, str]]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# Rows
# ---------------------------------------------------------------------------


def cycle_rows(series: MetricsSeries) -> list[dict]:
    return [{c: getattr(m, c) for c in CYCLE_COLUMNS} for m in series.cycles]


def summary_row(series: MetricsSeries) -> dict:
    cfg = series.config
    delta_l, delta_m, delta_h = cfg.thresholds
    return {
        "scheme": cfg.scheme.value,
        "pct_dishonest": float(cfg.pct_dishonest),
        "delta_l": float(delta_l),
        "delta_m": float(delta_m),
        "delta_h": float(delta_h),
        "k": cfg.width_k,
        "epsilon": cfg.embed_count,
        "detection_rate": series.detection_rate,
        "false_alarm_rate": series.false_alarm_rate,
        "leakage_probability": series.leakage_probability,
        "avg_tracing_delay_us": series.avg_tracing_delay_us,
    }


def _mean(values: list[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def aggregate_rows(results: Sequence[MetricsSeries]) -> list[dict]:
    """Mean of every rate across seeds, one row per distinct axis combination, input order."""
    groups: dict[tuple, list[dict]] = defaultdict(list)
    for series in results:
        row = summary_row(series)
        groups[tuple(row[c] for c in SUMMARY_COLUMNS[:7])].append(row)
    aggregated = []
    for key, rows in groups.items():
        out = dict(zip(SUMMARY_COLUMNS[:7], key))
        out["seeds"] = len(rows)
        for column in SUMMARY_COLUMNS[7:]:
            out[column] = _mean([r[column] for r in rows])
        aggregated.append(out)
    return aggregated


def delay_rows(cells: Sequence[DelayCell]) -> list[dict]:
    return [
        {
            "k": c.width_k,
            "epsilon": c.embed_count,
            "rounds": c.rounds,
            "mean_delay_us": c.mean_delay_us,
            "median_delay_us": c.median_delay_us,
            "hash_invocations_per_round": c.hash_invocations_per_round,
            "trace_bytes_per_round": c.trace_bytes_per_round,
        }
        for c in cells
    ]


def write_cycles_csv(series: MetricsSeries, path: Path) -> Path:
    return _write(path, CYCLE_COLUMNS, cycle_rows(series))


def write_summary_csv(results: Sequence[MetricsSeries], path: Path) -> Path:
    return _write(path, SUMMARY_COLUMNS, (summary_row(s) for s in results))


def write_sweep_csv(results: Sequence[MetricsSeries], path: Path) -> Path:
    return _write(path, SWEEP_COLUMNS, aggregate_rows(results))


def write_delay_csv(cells: Sequence[DelayCell], path: Path) -> Path:
    return _write(path, DELAY_COLUMNS, delay_rows(cells))


# ---------------------------------------------------------------------------
# Plots
# ---------------------------------------------------------------------------


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_METADATA)
    plt.close(fig)
    logger.debug("Rendered %s", path)
    return path


def plot_rate_by_dishonest(rows: list[dict], column: str, ylabel: str, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    by_scheme: dict[str, list[tuple[float, float]]] = defaultdict(list)
    for row in rows:
        if row[column] is not None:
            by_scheme[row["scheme"]].append((row["pct_dishonest"] * 100, row[column]))
    for scheme, points in sorted(by_scheme.items()):
        points.sort()
        xs, ys = zip(*points)
        ax.plot(xs, ys, marker="o", label=scheme)
    ax.set_xlabel("dishonest workers (%)")
    ax.set_ylabel(ylabel)
    ax.set_ylim(-0.05, 1.05)
    ax.legend()
    return _save(fig, path)


def plot_suppression(results: Sequence[MetricsSeries], path: Path) -> Path:
    """Per-cycle leak attempts for each scheme, averaged over the runs given."""
    fig, ax = plt.subplots(figsize=(6, 4))
    by_scheme: dict[str, list[list[int]]] = defaultdict(list)
    for series in results:
        by_scheme[series.config.scheme.value].append(series.column("leaks_attempted"))
    for scheme, runs in sorted(by_scheme.items()):
        width = min(len(r) for r in runs)
        curve = np.mean([r[:width] for r in runs], axis=0)
        first, last = quartile_means(curve)
        ax.plot(np.arange(width), curve, label=f"{scheme} (q1 {first:.1f}, q4 {last:.1f})")
    ax.set_xlabel("cycle")
    ax.set_ylabel("leak attempts")
    ax.legend()
    return _save(fig, path)


def plot_leak_probability(rows: list[dict], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = sorted({f"{r['delta_l']:g},{r['delta_m']:g},{r['delta_h']:g}" for r in rows})
    schemes = sorted({r["scheme"] for r in rows})
    x = np.arange(len(labels))
    bar = 0.8 / max(1, len(schemes))
    for i, scheme in enumerate(schemes):
        values = []
        for label in labels:
            matching = [
                r["leakage_probability"]
                for r in rows
                if r["scheme"] == scheme
                and f"{r['delta_l']:g},{r['delta_m']:g},{r['delta_h']:g}" == label
            ]
            values.append(_mean(matching) or 0.0)
        ax.bar(x + i * bar, values, bar, label=scheme)
    ax.set_xticks(x + bar * (len(schemes) - 1) / 2, labels)
    ax.set_xlabel("thresholds (l,m,h)")
    ax.set_ylabel("leakage probability")
    ax.legend()
    return _save(fig, path)


def plot_tracing_delay(cells: Sequence[DelayCell], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for width_k in sorted({c.width_k for c in cells}):
        points = sorted((c.embed_count, c.median_delay_us) for c in cells if c.width_k == width_k)
        xs, ys = zip(*points)
        ax.plot(xs, ys, marker="o", label=f"k={width_k}")
    ax.set_xlabel("embedded copies")
    ax.set_ylabel("median tracing delay (us)")
    ax.legend()
    return _save(fig, path)


def plot_logical_delay(rows: list[dict], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    schemes = [r["scheme"] for r in rows]
    ax.bar(schemes, [r["avg_tracing_delay_us"] or 0.0 for r in rows])
    ax.set_ylabel("mean feedback delay (logical us)")
    return _save(fig, path)


def render_run_plots(results: Sequence[MetricsSeries], out_dir: Path) -> list[Path]:
    rows = [summary_row(s) for s in results]
    plots = out_dir / "plots"
    paths = [
        plot_rate_by_dishonest(rows, "detection_rate", "detection rate", plots / "detection.png"),
        plot_rate_by_dishonest(rows, "false_alarm_rate", "false alarm rate", plots / "false_alarm.png"),
        plot_suppression(results, plots / "suppression.png"),
        plot_leak_probability(rows, plots / "leak_probability.png"),
        plot_logical_delay(rows, plots / "tracing_delay.png"),
    ]
    return paths
