"""Scatter figures for evaluation reports.

Renders predicted-versus-truth scatter plots for feeding and
co-occurrence rates next to the delimited report output.  Rendering is
headless and byte-deterministic: the Agg backend, a fixed dpi, and no
software/timestamp metadata in the PNG.
"""
from __future__ import annotations

import os
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .metrics import BenchmarkReport  # noqa: E402

_DPI = 100


def _render_scatter(
    points: Sequence[tuple[float, float]],
    xlabel: str,
    ylabel: str,
    title: str,
    path: Path,
) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 4.5), dpi=_DPI)
    truth = [p[0] for p in points]
    pred = [p[1] for p in points]
    limit = max([*truth, *pred, 1e-9]) * 1.08
    ax.plot([0, limit], [0, limit], linestyle="--", color="0.6", linewidth=1, zorder=1)
    ax.scatter(truth, pred, s=28, alpha=0.75, edgecolors="none", zorder=2)
    ax.set_xlim(0, limit)
    ax.set_ylim(0, limit)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.set_aspect("equal")
    fig.tight_layout()
    tmp = path.with_name(path.name + ".tmp")
    fig.savefig(tmp, format="png", metadata={"Software": None})
    plt.close(fig)
    os.replace(tmp, path)


def render_report_figures(report: BenchmarkReport, out_dir: str | Path) -> list[Path]:
    """Write feeding and co-occurrence scatter PNGs; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if report.feeding_points:
        path = out_dir / "feeding_scatter.png"
        _render_scatter(
            [(tru, pred) for _, _, pred, tru in report.feeding_points],
            xlabel="ground truth (pecks/min)",
            ylabel="predicted (pecks/min)",
            title="Feeding rate per individual",
            path=path,
        )
        written.append(path)
    if report.cooccurrence_points:
        path = out_dir / "cooccurrence_scatter.png"
        _render_scatter(
            [(tru, pred) for _, _, _, pred, tru in report.cooccurrence_points],
            xlabel="ground truth (proportion of video)",
            ylabel="predicted (proportion of video)",
            title="Co-occurrence rate per pair",
            path=path,
        )
        written.append(path)
    return written
