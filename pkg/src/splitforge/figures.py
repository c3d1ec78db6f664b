"""Figure rendering for CLI reports.

Every renderer writes a PNG next to the delimited output it illustrates.
Rendering is deterministic: the Agg backend, fixed DPI, and fixed savefig
metadata (no timestamps)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .cost import CostReport, SweepGrid
from .search import SearchResult

_SAVE = {"dpi": 110, "metadata": {"Software": "splitforge"}}


def _finish(fig, path: str) -> None:
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def sweep_figure(grid: SweepGrid, path: str) -> None:
    """Split parameter count vs k1, one line per k2, against the unsplit
    baseline."""
    fig, ax = plt.subplots(figsize=(6, 4))
    k2s = sorted({c.k2 for c in grid.cells})
    for k2 in k2s:
        pts = [(c.k1, c.params_split) for c in grid.cells
               if c.k2 == k2 and c.params_split is not None]
        if pts:
            ax.plot(*zip(*pts), marker="o", label=f"k2={k2}")
    ax.axhline(grid.cells[0].params_org, color="k", linestyle="--",
               linewidth=1, label="unsplit")
    ax.set_xlabel("k1")
    ax.set_ylabel("parameters")
    ax.set_title(f"two-layer split sweep ({grid.l0}-{grid.l1}-{grid.l2})")
    ax.legend(fontsize=8)
    _finish(fig, path)


def memory_figure(report: CostReport, path: str) -> None:
    """Peak activation elements per schedule."""
    fig, ax = plt.subplots(figsize=(6, 3.2))
    names = list(report.memory)
    peaks = [report.memory[n].peak_elements for n in names]
    bars = ax.barh(names, peaks, color="#4878a8")
    for bar, name in zip(bars, names):
        ax.text(bar.get_width(), bar.get_y() + bar.get_height() / 2,
                f" {report.memory[name].peak_op}", va="center", fontsize=8)
    ax.set_xlabel("peak live activation elements")
    ax.set_title(report.arch)
    _finish(fig, path)


def history_figure(history, path: str) -> None:
    """Loss and accuracy curves over epochs."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    epochs = [h.epoch for h in history]
    ax1.plot(epochs, [h.loss for h in history], color="#a84848")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("training loss")
    ax2.plot(epochs, [h.train_acc for h in history], label="train")
    if history and history[0].test_acc is not None:
        ax2.plot(epochs, [h.test_acc for h in history], label="test")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("accuracy")
    ax2.set_ylim(0, 1.02)
    ax2.legend(fontsize=8)
    _finish(fig, path)


def trace_figure(result: SearchResult, path: str) -> None:
    """Per-block accuracy over the factor ladder, with the accepted factor
    marked and the block baseline shown as a dashed level."""
    fig, ax = plt.subplots(figsize=(6.5, 4))
    blocks = sorted({r.block for r in result.records})
    cmap = plt.get_cmap("tab10")
    for i, b in enumerate(blocks):
        rows = [r for r in result.records if r.block == b and r.accuracy is not None]
        xs = [r.factor for r in rows]
        ys = [r.accuracy * 100 for r in rows]
        color = cmap(i % 10)
        ax.plot(xs, ys, marker="o", color=color, label=f"block {b}")
        base = next((r.baseline for r in rows), None)
        if base is not None:
            ax.axhline(base * 100, color=color, linewidth=0.6, linestyle=":")
        chosen = result.factors[b - 1]
        pick = next((r for r in rows if r.factor == chosen), None)
        if pick is not None:
            ax.plot([pick.factor], [pick.accuracy * 100], marker="s",
                    markersize=10, fillstyle="none", color=color)
    ax.set_xlabel("split factor")
    ax.set_ylabel("accuracy (%)")
    ax.set_title(f"greedy search -> {'-'.join(map(str, result.factors))}")
    ax.legend(fontsize=8)
    _finish(fig, path)
