"""Matplotlib figures rendered to deterministic SVG text."""

from __future__ import annotations

import io
import re
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "svg.hashsalt": "audit5s",
    "svg.fonttype": "none",
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.titlesize": 10,
    "axes.titleweight": "bold",
}

BAR_COLOR = "#2563eb"
ALT_COLOR = "#94a3b8"
LINE_COLOR = "#16a34a"


def _svg(fig) -> str:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None}, bbox_inches=None)
    plt.close(fig)
    text = buf.getvalue()
    # drop the XML prolog so the SVG can be inlined in HTML
    return re.sub(r"^<\?xml[^>]*>\s*(<!DOCTYPE[^>]*>\s*)?", "", text).strip() + "\n"


def _fmt(value: float, decimals: int) -> str:
    return f"{value:.{decimals}f}"


def hbar_svg(
    title: str,
    labels: Sequence[str],
    values: Sequence[float],
    xlabel: str = "",
    decimals: int = 2,
    xmax: Optional[float] = None,
) -> str:
    """Horizontal bar chart with each bar labeled by its value."""
    with plt.rc_context(STYLE):
        height = 0.6 + 0.38 * len(labels)
        fig, ax = plt.subplots(figsize=(6.0, height + 0.6))
        ypos = list(range(len(labels)))[::-1]
        ax.barh(ypos, values, color=BAR_COLOR, height=0.6)
        ax.set_yticks(ypos)
        ax.set_yticklabels(labels)
        top = xmax if xmax is not None else (max(values) * 1.15 if values and max(values) > 0 else 1.0)
        bottom = min(0.0, min(values) * 1.15) if values else 0.0
        ax.set_xlim(bottom, top)
        for y, v in zip(ypos, values):
            ax.text(v + top * 0.01, y, _fmt(v, decimals), va="center", fontsize=8)
        ax.set_title(title)
        if xlabel:
            ax.set_xlabel(xlabel)
        fig.tight_layout()
        return _svg(fig)


def line_svg(
    title: str,
    labels: Sequence[str],
    values: Sequence[float],
    ylabel: str = "",
    ylim: Optional[tuple[float, float]] = None,
    bands: Sequence[tuple[float, str]] = (),
) -> str:
    """Line chart over categorical x positions, with optional horizontal guides."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7.0, 3.0))
        xs = list(range(len(values)))
        ax.plot(xs, values, marker="o", markersize=3, color=LINE_COLOR, linewidth=1.2)
        for level, name in bands:
            ax.axhline(level, color=ALT_COLOR, linewidth=0.8, linestyle="--")
            ax.text(xs[-1] if xs else 0, level, f" {name}", va="bottom", ha="right", fontsize=7, color="#475569")
        step = max(1, len(labels) // 10)
        ax.set_xticks(xs[::step])
        ax.set_xticklabels(list(labels)[::step], rotation=30, ha="right", fontsize=7)
        if ylim:
            ax.set_ylim(*ylim)
        if ylim and ylim[0] < 0:
            ax.axhline(0, color="#334155", linewidth=0.6)
        ax.set_title(title)
        if ylabel:
            ax.set_ylabel(ylabel)
        fig.tight_layout()
        return _svg(fig)
