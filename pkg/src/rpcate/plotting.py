"""Figure output for attention maps and loss curves.

Figures are written with a fixed SVG hash salt and no date metadata so the
same data gives byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "svg.hashsalt": "rpcate",
    "svg.fonttype": "none",
}
_METADATA = {"Date": None, "Creator": None}
_AVG_COLORS = ("red", "green", "blue", "orange", "purple")


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = _METADATA if path.suffix.lower() in (".svg", ".pdf") else None
    fig.savefig(path, metadata=meta, bbox_inches="tight")
    plt.close(fig)
    return path


def attention_heatmap(att: np.ndarray, averages: np.ndarray, feature_names, path, repetition: int) -> Path:
    """Features on y, samples on x; dashed lines on the color bar mark per-feature averages."""
    with plt.rc_context(STYLE):
        m, n = att.shape
        fig, ax = plt.subplots(figsize=(max(4.0, min(12.0, m / 8.0)), 0.6 * n + 1.2))
        im = ax.imshow(att.T, aspect="auto", cmap="viridis", interpolation="nearest")
        ax.set_yticks(range(n))
        ax.set_yticklabels(feature_names)
        ax.set_xlabel("sample index")
        ax.set_ylabel("feature")
        ax.set_title(f"attention N:{repetition}")
        cbar = fig.colorbar(im, ax=ax)
        color = _AVG_COLORS[(repetition - 1) % len(_AVG_COLORS)]
        for j, v in enumerate(averages):
            cbar.ax.axhline(v, color=color, linestyle="--", linewidth=1.0)
            cbar.ax.text(1.05, v, f"{feature_names[j]}: {v:.4f}", transform=cbar.ax.get_yaxis_transform(),
                         fontsize=6, va="center", color=color)
        return _save(fig, path)


def loss_curve(history, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        epochs = np.arange(1, len(history) + 1)
        ax.semilogy(epochs, history, linewidth=1.0)
        ax.set_xlabel("epoch")
        ax.set_ylabel("train loss")
        ax.grid(True, which="both", alpha=0.3)
        return _save(fig, path)
