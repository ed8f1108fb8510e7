"""Comparison tables and figures over benchmark CSV output.

Reads one or more sweep CSVs, prints per-stage medians plus the derived
aggregation speedup (summed individual verifications over one aggregate
verification), and renders one figure per sweep alongside the tables.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .bench import CSV_HEADER

EXPECTED_COLUMNS = CSV_HEADER.split(",")


class ReportError(Exception):
    """Schema mismatch or unreadable benchmark CSV."""


def load_records(paths) -> list[dict]:
    records = []
    for path in paths:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != EXPECTED_COLUMNS:
                raise ReportError(
                    f"{path}: expected columns {EXPECTED_COLUMNS}, got {reader.fieldnames}")
            for row in reader:
                try:
                    records.append({
                        "sweep": row["sweep"],
                        "value": int(row["value"]),
                        "stage": row["stage"],
                        "mean_ms": float(row["mean_ms"]),
                        "p50_ms": float(row["p50_ms"]),
                        "p95_ms": float(row["p95_ms"]),
                        "reps": int(row["reps"]),
                        "profile": row["profile"],
                        "seed": int(row["seed"]),
                    })
                except (KeyError, TypeError, ValueError) as exc:
                    raise ReportError(f"{path}: bad row {row!r}") from exc
    return records


def comparison_table(records: list[dict]) -> str:
    """Per-(sweep, value, stage) medians, with the aggregation speedup column."""
    by_point = defaultdict(dict)
    for rec in records:
        by_point[(rec["sweep"], rec["value"])][rec["stage"]] = rec

    lines = [f"{'sweep':<8} {'value':>7} {'stage':<16} {'p50_ms':>10} "
             f"{'mean_ms':>10} {'speedup':>9}"]
    for (sweep, value) in sorted(by_point):
        stages = by_point[(sweep, value)]
        speedup = ""
        if "agg_verify" in stages and "ls_ver_sum" in stages \
                and stages["agg_verify"]["p50_ms"] > 0:
            ratio = stages["ls_ver_sum"]["p50_ms"] / stages["agg_verify"]["p50_ms"]
            speedup = f"{ratio:.1f}x"
        for stage in sorted(stages):
            rec = stages[stage]
            cell = speedup if stage == "agg_verify" else ""
            lines.append(f"{sweep:<8} {value:>7} {stage:<16} {rec['p50_ms']:>10.3f} "
                         f"{rec['mean_ms']:>10.3f} {cell:>9}")
    return "\n".join(lines)


def render_figures(records: list[dict], out_dir) -> list[Path]:
    """One figure per sweep: point value vs mean wall time, a line per stage."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_sweep = defaultdict(lambda: defaultdict(list))
    for rec in records:
        by_sweep[rec["sweep"]][rec["stage"]].append((rec["value"], rec["mean_ms"]))

    axis_labels = {
        "packet": "packet size (bytes)",
        "batch": "aggregated messages",
        "nodes": "cloud servers",
        "tx": "transactions",
    }
    written = []
    for sweep, stages in sorted(by_sweep.items()):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        for stage, points in sorted(stages.items()):
            points = sorted(points)
            ax.plot([p[0] for p in points], [p[1] for p in points],
                    marker="o", label=stage)
        ax.set_xlabel(axis_labels.get(sweep, sweep))
        ax.set_ylabel("wall time (ms)")
        ax.set_title(f"{sweep} sweep")
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        path = out_dir / f"bench_{sweep}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
