"""Matplotlib figures written next to the CSV/JSON outputs."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .fileio import atomic_path  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}
COLORS = {"amb": "#4d4d4d", "amss": "#1b9e77"}


def _save(fig, path) -> Path:
    path = Path(path)
    with atomic_path(path) as tmp:
        fig.savefig(tmp, format=path.suffix.lstrip(".") or "png", dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_laf_comparison(amb, amss, path, title: str | None = None) -> Path:
    """LAF time series of the ambient and augmented signals."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.5, 2.8))
        ax.plot(amb.times / 60.0, amb.levels, lw=0.6, color=COLORS["amb"], label="AMB")
        ax.plot(amss.times / 60.0, amss.levels, lw=0.6, color=COLORS["amss"], label="AMSS")
        ax.set_xlabel("Time / min")
        ax.set_ylabel(r"$L_\mathrm{AF}$ / dBA")
        if title:
            ax.set_title(title)
        ax.legend(loc="lower right", frameon=False)
        return _save(fig, path)


def plot_selection_frequency(report: Mapping[str, float], path) -> Path:
    """Horizontal bars of selection share per masker."""
    ids = list(report)[::-1]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 0.3 * len(ids) + 1.0))
        ax.barh(ids, [report[k] for k in ids], color=COLORS["amss"])
        ax.set_xlabel("Selected intervals / %")
        ax.set_xlim(0, 100)
        return _save(fig, path)


def plot_contrasts(rows: Sequence[dict], path) -> Path:
    """Percent-scale changes per attribute, one panel per contrast group."""
    groups: dict[str, list[dict]] = {}
    for r in rows:
        groups.setdefault(f"{r['kind']}: {r['at']} ({r['from']}→{r['to']})", []).append(r)
    n = max(1, len(groups))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, n, figsize=(2.6 * n, 3.6), sharey=True, squeeze=False)
        for ax, (label, items) in zip(axes[0], groups.items()):
            attrs = [r["attribute"] for r in items]
            vals = np.array([r["percent_change"] for r in items])
            ax.barh(attrs, vals, color=np.where(vals >= 0, COLORS["amss"], COLORS["amb"]))
            ax.axvline(0, color="k", lw=0.5)
            ax.set_title(label, fontsize=8)
            ax.set_xlabel("Scale change / %")
        axes[0][0].invert_yaxis()
        return _save(fig, path)
