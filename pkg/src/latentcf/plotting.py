"""SVG figures for the reports: utilization bars, ablation heat maps, training curves.

Figures are written with a fixed hash salt and no date metadata so the same
numbers always produce the same bytes.
"""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "svg.hashsalt": "latentcf",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}

# one color per method, stable across figures
METHOD_COLORS = {"tabcf": "#1b6ca8", "wachter": "#d1495b", "dice_like": "#edae49"}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)
    return path


def utilization_bars(utilization: dict[str, dict[str, float]], feature_kinds: dict[str, str], path,
                     title: str = "Feature utilization over valid counterfactuals") -> Path:
    """Grouped bars, one group per feature and one bar per method.

    ``utilization`` maps method -> {feature: rate}.  Categorical feature
    labels are marked with a trailing ``*``.
    """
    methods = list(utilization)
    features = list(feature_kinds)
    width = 0.8 / max(len(methods), 1)
    x = np.arange(len(features))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.7 * len(features) + 1.5), 3.0))
        for k, m in enumerate(methods):
            rates = [utilization[m].get(f, 0.0) for f in features]
            ax.bar(x + (k - (len(methods) - 1) / 2) * width, rates, width,
                   label=m, color=METHOD_COLORS.get(m))
        ax.set_xticks(x)
        ax.set_xticklabels([f + ("*" if feature_kinds[f] == "categorical" else "") for f in features],
                           rotation=30, ha="right")
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("utilization rate")
        ax.set_title(title)
        ax.legend(frameon=False, ncol=max(1, len(methods)))
        return _save(fig, path)


def heat_tables(panels: dict[str, np.ndarray], row_values, col_values, path,
                row_label: str = "lambda_input", col_label: str = "lambda_latent") -> Path:
    """One annotated heat map per metric over the lambda grid."""
    n = len(panels)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, n, figsize=(3.0 * n, 2.8), squeeze=False)
        for ax, (name, grid) in zip(axes[0], panels.items()):
            grid = np.asarray(grid, dtype=float)
            finite = grid[np.isfinite(grid)]
            vmin, vmax = (finite.min(), finite.max()) if finite.size else (0.0, 1.0)
            ax.imshow(np.where(np.isfinite(grid), grid, np.nan), cmap="viridis", origin="lower",
                      vmin=vmin, vmax=vmax if vmax > vmin else vmin + 1e-9)
            for i in range(grid.shape[0]):
                for j in range(grid.shape[1]):
                    v = grid[i, j]
                    ax.text(j, i, "-" if not math.isfinite(v) else f"{v:.2f}",
                            ha="center", va="center", fontsize=7, color="white")
            ax.set_xticks(range(len(col_values)))
            ax.set_xticklabels([f"{v:g}" for v in col_values])
            ax.set_yticks(range(len(row_values)))
            ax.set_yticklabels([f"{v:g}" for v in row_values])
            ax.set_xlabel(col_label)
            ax.set_ylabel(row_label)
            ax.set_title(name)
        fig.tight_layout()
        return _save(fig, path)


def training_curve(curve: dict, path) -> Path:
    """Loss terms per epoch on a log scale, with beta on a twin axis."""
    epochs = np.asarray(curve["epoch"])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        ax.semilogy(epochs, np.maximum(curve["recon"], 1e-12), label="reconstruction")
        ax.semilogy(epochs, np.maximum(curve["kl"], 1e-12), label="KL")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        twin = ax.twinx()
        twin.semilogy(epochs, curve["beta"], color="0.5", linestyle="--", label="beta")
        twin.set_ylabel("beta")
        lines = ax.get_lines() + twin.get_lines()
        ax.legend(lines, [ln.get_label() for ln in lines], frameon=False)
        return _save(fig, path)
