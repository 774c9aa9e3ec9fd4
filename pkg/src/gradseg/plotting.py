"""Report figures: DSC distributions and volume-change scatter panels.

Figures are rendered with the Agg backend and saved without a software
stamp so repeated runs write identical PNG bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 8,
    "axes.titlesize": 8,
    "axes.labelsize": 8,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "legend.fontsize": 7,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.0,
    "savefig.dpi": 150,
    "svg.hashsalt": "gradseg",
}
COLORS = {"GTVp": "#1f77b4", "GTVn": "#ff7f0e"}
PANEL_W, PANEL_H = 2.4, 2.0


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def _violin(ax, groups, labels, colors):
    data = [np.asarray(g, dtype=float) for g in groups]
    keep = [i for i, d in enumerate(data) if d.size > 0]
    if keep:
        parts = ax.violinplot([data[i] for i in keep], positions=[i + 1 for i in keep], showmedians=True)
        for body, i in zip(parts["bodies"], keep):
            body.set_facecolor(colors[i])
            body.set_alpha(0.5)
    for i, d in enumerate(data):
        ax.scatter(np.full(d.size, i + 1), d, s=6, color=colors[i], zorder=3)
    ax.set_xticks(range(1, len(groups) + 1))
    ax.set_xticklabels(labels)
    ax.set_ylim(-0.05, 1.05)


def plot_dsc_distribution(per_label: dict[str, list[float]], path, title: str = "") -> Path:
    """Violin + strip plot of per-case DSC, one violin per label."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(PANEL_W * 1.2, PANEL_H * 1.2))
        names = list(per_label)
        _violin(ax, [per_label[n] for n in names], names, [COLORS.get(n, "gray") for n in names])
        ax.set_ylabel("DSC")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def plot_paired_comparison(pairs: dict[str, tuple[list[float], list[float]]], names=("A", "B"), path=None, pvalues=None) -> Path:
    """Side-by-side violins of two methods per label (e.g. with/without gradient map)."""
    with plt.rc_context(STYLE):
        labels = list(pairs)
        fig, axes = plt.subplots(1, len(labels), figsize=(PANEL_W * len(labels), PANEL_H * 1.2), squeeze=False)
        for ax, lab in zip(axes[0], labels):
            a, b = pairs[lab]
            _violin(ax, [b, a], [names[1], names[0]], ["#999999", COLORS.get(lab, "gray")])
            title = lab
            if pvalues and pvalues.get(lab) is not None:
                title += f" (p={pvalues[lab]:.3g})"
            ax.set_title(title)
            ax.set_ylabel("DSC")
        fig.tight_layout()
        return _save(fig, path)


def plot_volume_change(binned: dict, path) -> Path:
    """One row per label, one panel per volume group.

    x: pre-RT minus mid-RT volume (cc); y: DSC; marker area follows mid-RT
    volume. Zero-volume cases are drawn as red crosses in the first panel.
    """
    with plt.rc_context(STYLE):
        labels = list(binned)
        ncols = max(len(b.groups) - 1 for b in binned.values()) if labels else 1
        fig, axes = plt.subplots(
            max(len(labels), 1), ncols, figsize=(PANEL_W * ncols, PANEL_H * max(len(labels), 1)), squeeze=False
        )
        for row, lab in enumerate(labels):
            b = binned[lab]
            groups = [b.underflow, *b.bins, b.overflow]
            for col, g in enumerate(groups):
                ax = axes[row][col]
                if g.records:
                    x = [r.delta_cc for r in g.records]
                    y = [r.dsc for r in g.records]
                    s = [10 + 20 * r.mid_cc for r in g.records]
                    ax.scatter(x, y, s=s, alpha=0.6, color=COLORS.get(lab, "gray"), edgecolors="none")
                if col == 0 and b.zero_volume.records:
                    ax.scatter(
                        [r.delta_cc for r in b.zero_volume.records],
                        [r.dsc for r in b.zero_volume.records],
                        marker="x",
                        color="red",
                        s=20,
                    )
                rho = "n/a" if g.rho is None else f"{g.rho:.2f}"
                ax.set_title(f"{lab} mid {g.name} cc, rho={rho}")
                ax.set_ylim(-0.05, 1.05)
                if row == len(labels) - 1:
                    ax.set_xlabel("volume change (cc)")
                if col == 0:
                    ax.set_ylabel("DSC")
            for col in range(len(groups), ncols):
                axes[row][col].axis("off")
        fig.tight_layout()
        return _save(fig, path)
