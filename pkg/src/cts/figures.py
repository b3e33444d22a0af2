"""Matplotlib rendering of report figures.

The report path writes these PNGs next to the delimited output: a
macro-F1 bar chart over report rows and, when specialization ran, the
per-step training-loss curves.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .experiments import Report

_STYLE = {
    "figure.figsize": (6.4, 3.6),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
}


def _save(fig, path: Path) -> None:
    fig.savefig(path, bbox_inches="tight", metadata={"Software": "cts"})
    plt.close(fig)


def macro_f1_bars(report: Report, path: str | Path) -> Path:
    """One bar per report row, macro-F1 x100 with std error bars."""
    path = Path(path)
    rows = [r for r in report.rows if r.macro_mean is not None]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        labels = [f"{r.variant}\n{r.corpus} {r.setup}" for r in rows]
        means = [100 * r.macro_mean for r in rows]
        errs = [100 * r.macro_std if r.macro_std is not None else 0.0 for r in rows]
        ax.bar(range(len(rows)), means, yerr=errs, capsize=3, color="#4878a8")
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(labels)
        ax.set_ylabel("macro F1 (x100)")
        ax.set_title("Event macro-averaged F1")
        _save(fig, path)
    return path


def loss_curves(curves: dict[str, list[tuple[int, float, float]]], path: str | Path) -> Path:
    """Specialization loss per optimizer step, one line per run."""
    path = Path(path)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for name in sorted(curves):
            steps = [s for s, _, _ in curves[name]]
            losses = [l for _, _, l in curves[name]]
            ax.plot(steps, losses, label=name, linewidth=1.0)
        ax.set_xlabel("step")
        ax.set_ylabel("contrastive loss")
        ax.set_title("Specialization training loss")
        if len(curves) <= 12:
            ax.legend(fontsize=7)
        _save(fig, path)
    return path


def render_report_figures(report: Report, outdir: str | Path) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    if any(r.macro_mean is not None for r in report.rows):
        written.append(macro_f1_bars(report, outdir / "macro_f1.png"))
    if report.loss_curves:
        written.append(loss_curves(report.loss_curves, outdir / "loss.png"))
    return written
