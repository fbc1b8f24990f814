"""SVG convergence plots of aggregated log-regret tables."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

AGGREGATE_COLUMNS = ("iteration", "q10", "median", "q90")

# stable SVG output: text kept as text, fixed element ids, no timestamp
SVG_STYLE = {"svg.fonttype": "none", "svg.hashsalt": "flowbo"}


class MalformedCSVError(ValueError):
    pass


@dataclass
class AggregateSeries:
    label: str
    iteration: np.ndarray
    q10: np.ndarray
    median: np.ndarray
    q90: np.ndarray


def read_aggregate_csv(path, label: str | None = None) -> AggregateSeries:
    """Parse an ``iteration,q10,median,q90`` table; errors name the offending row."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in AGGREGATE_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise MalformedCSVError(f"{path}: header is missing columns {missing}")
        rows = []
        # row 1 is the header
        for lineno, row in enumerate(reader, start=2):
            try:
                vals = [float(row[c]) for c in AGGREGATE_COLUMNS]
            except (TypeError, ValueError):
                raise MalformedCSVError(f"{path}: row {lineno}: non-numeric or missing value in {row}") from None
            if not vals[1] <= vals[2] <= vals[3]:
                raise MalformedCSVError(f"{path}: row {lineno}: expected q10 <= median <= q90")
            rows.append(vals)
    if not rows:
        raise MalformedCSVError(f"{path}: no data rows")
    a = np.array(rows)
    return AggregateSeries(label or path.stem, a[:, 0], a[:, 1], a[:, 2], a[:, 3])


def render_aggregates(series: list, title: str = "Log-regret", ylabel: str = "log-regret"):
    """Median line and q10-q90 band per series on one axis; returns the figure."""
    with plt.rc_context(SVG_STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        for k, s in enumerate(series):
            colour = f"C{k % 10}"
            if s.iteration.size == 1:
                # a single iteration draws as a marker with an error bar
                yerr = np.array([[s.median[0] - s.q10[0]], [s.q90[0] - s.median[0]]])
                ax.errorbar([s.iteration[0]], [s.median[0]], yerr=yerr,
                            fmt="o", color=colour, label=s.label, capsize=3)
            else:
                ax.fill_between(s.iteration, s.q10, s.q90, color=colour, alpha=0.25, linewidth=0)
                ax.plot(s.iteration, s.median, color=colour, label=s.label)
        ax.set_xlabel("iteration")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.legend()
        fig.tight_layout()
    return fig


def save_svg(fig, out_path) -> Path:
    out_path = Path(out_path)
    with plt.rc_context(SVG_STYLE):
        fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out_path


def plot_aggregate_files(paths, out_svg, labels=None, title: str = "Log-regret") -> Path:
    labels = list(labels or [])
    series = [read_aggregate_csv(p, labels[i] if i < len(labels) else None) for i, p in enumerate(paths)]
    return save_svg(render_aggregates(series, title), out_svg)


def plot_history(iterations, best_log_regret, out_svg, title: str = "Best log-regret") -> Path:
    """Single-run convergence: best log-regret after each outer iteration."""
    it = np.asarray(iterations, dtype=float)
    y = np.asarray(best_log_regret, dtype=float)
    s = AggregateSeries("best so far", it, y, y, y)
    return save_svg(render_aggregates([s], title), out_svg)
