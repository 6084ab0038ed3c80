"""Trend-figure rendering from sweep CSVs: one curve per algorithm, error bands.

Consumes exactly the experiment harness CSV schema (documented below); knows
nothing about the solvers that produced it.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

#: Columns the harness writes, in order.
CSV_COLUMNS = ("sweep_var", "sweep_value", "trial", "algo", "log_objective",
               "product_vos", "vos_comm_mean", "vos_pos_mean", "vos_sense_mean",
               "wall_ms", "certified")

#: Metrics a curve may plot.
METRICS = ("log_objective", "product_vos")

DEFAULT_STYLES = {
    "MODP": {"color": "#d62728", "marker": "s"},
    "VoS-SCA": {"color": "#1f77b4", "marker": "o"},
    "VoS-Fixed": {"color": "#2ca02c", "marker": "^"},
    "Random-SCA": {"color": "#9467bd", "marker": "v"},
    "Random-Fixed": {"color": "#8c564b", "marker": "d"},
}

_FALLBACK_COLORS = ("#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


class SchemaError(ValueError):
    """The CSV does not match the sweep schema; the message names the column."""


@dataclass(frozen=True)
class PlotSpec:
    csv_path: str
    out_path: str
    metric: str = "log_objective"
    x_label: str | None = None
    y_label: str | None = None
    title: str | None = None
    styles: dict = field(default_factory=dict)
    overwrite: bool = False

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")


def read_sweep_csv(path):
    """Parse and validate a sweep CSV; raises SchemaError naming any missing column."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in CSV_COLUMNS:
            if col not in header:
                raise SchemaError(f"sweep CSV is missing required column {col!r}")
        rows = []
        for rec in reader:
            rows.append({
                "sweep_var": rec["sweep_var"],
                "sweep_value": float(rec["sweep_value"]),
                "algo": rec["algo"],
                "log_objective": float(rec["log_objective"]),
                "product_vos": float(rec["product_vos"]),
            })
    if not rows:
        raise SchemaError("sweep CSV contains no data rows")
    return rows


def _series(rows, algo, metric):
    by_value = {}
    for row in rows:
        if row["algo"] == algo:
            by_value.setdefault(row["sweep_value"], []).append(row[metric])
    xs = sorted(by_value)
    means = np.array([np.mean(by_value[x]) for x in xs])
    stderr = np.array([
        np.std(by_value[x], ddof=1) / np.sqrt(len(by_value[x]))
        if len(by_value[x]) > 1 else 0.0
        for x in xs])
    return np.array(xs), means, stderr


def render(spec: PlotSpec) -> Path:
    """Render the trend figure; returns the written path.

    One mean curve per algorithm with a +/- one-standard-error band. The input
    CSV is never modified; an existing output path is refused unless the spec
    sets overwrite. Identical CSV and spec give identical bytes on a platform.
    """
    out = Path(spec.out_path)
    if out.exists() and not spec.overwrite:
        raise FileExistsError(f"{out} exists; pass overwrite to replace it")
    rows = read_sweep_csv(spec.csv_path)
    algos_in_csv = sorted({r["algo"] for r in rows})
    styles = dict(DEFAULT_STYLES)
    styles.update(spec.styles)
    wanted = list(spec.styles) if spec.styles else algos_in_csv
    missing = [a for a in wanted if a not in algos_in_csv]
    for algo in missing:
        warnings.warn(f"algorithm {algo!r} not present in the CSV; skipped",
                      stacklevel=2)

    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=150)
    fallback = 0
    for algo in [a for a in wanted if a in algos_in_csv]:
        xs, means, stderr = _series(rows, algo, spec.metric)
        style = styles.get(algo)
        if style is None:
            style = {"color": _FALLBACK_COLORS[fallback % len(_FALLBACK_COLORS)],
                     "marker": "x"}
            fallback += 1
        ax.plot(xs, means, label=algo, linewidth=1.6, markersize=5, **style)
        ax.fill_between(xs, means - stderr, means + stderr,
                        color=style["color"], alpha=0.18, linewidth=0)
    ax.set_xlabel(spec.x_label or rows[0]["sweep_var"])
    default_y = ("mean log objective" if spec.metric == "log_objective"
                 else "mean product value-of-service")
    ax.set_ylabel(spec.y_label or default_y)
    if spec.title:
        ax.set_title(spec.title)
    ax.grid(alpha=0.3, linestyle=":")
    ax.legend()
    fig.tight_layout()
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out)
    plt.close(fig)
    return out
