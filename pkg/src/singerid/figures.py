"""Report figures rendered headlessly next to the delimited outputs.

Every report CSV/JSON the CLI writes gets a companion SVG from here.
The Agg backend and a fixed hash salt keep renders reproducible.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

matplotlib.rcParams["svg.hashsalt"] = "singerid"

_SAVE_KW = {"metadata": {"Date": None}, "bbox_inches": "tight"}


def save_history_figure(history: list, path) -> None:
    """Training curves: loss on the left axis, F1/accuracy on the right."""
    epochs = [h["epoch"] for h in history]
    fig, ax_loss = plt.subplots(figsize=(7, 4))
    ax_loss.plot(epochs, [h["train_loss"] for h in history],
                 color="tab:red", label="train loss")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("cross-entropy loss", color="tab:red")
    ax_loss.tick_params(axis="y", labelcolor="tab:red")
    ax_acc = ax_loss.twinx()
    ax_acc.plot(epochs, [h["train_accuracy"] for h in history],
                color="tab:blue", label="train accuracy")
    ax_acc.plot(epochs, [h["val_song_f1"] for h in history],
                color="tab:green", label="val song F1")
    ax_acc.set_ylabel("accuracy / F1")
    ax_acc.set_ylim(0.0, 1.05)
    lines = ax_loss.get_lines() + ax_acc.get_lines()
    ax_acc.legend(lines, [ln.get_label() for ln in lines], loc="center right")
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_embedding_figure(layout, artists, path) -> None:
    """2-D scatter of the t-SNE layout, one color per artist."""
    fig, ax = plt.subplots(figsize=(6, 6))
    seen = sorted(set(artists))
    cmap = plt.get_cmap("tab20")
    for i, artist in enumerate(seen):
        idx = [j for j, a in enumerate(artists) if a == artist]
        ax.scatter(layout[idx, 0], layout[idx, 1], s=18,
                   color=cmap(i % 20), label=artist)
    ax.set_xlabel("t-SNE 1")
    ax.set_ylabel("t-SNE 2")
    ax.legend(fontsize=7, markerscale=1.2, loc="best")
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_vocalness_figure(rows, threshold_db: float, path) -> None:
    """Per-segment truth probability against vocal-stem loudness."""
    fig, ax = plt.subplots(figsize=(7, 4))
    xs = [r["vocalness_db"] for r in rows]
    ys = [r["truth_prob"] for r in rows]
    ax.scatter(xs, ys, s=14, alpha=0.7, color="tab:purple")
    ax.axvline(threshold_db, color="tab:gray", linestyle="--",
               label=f"vocal threshold {threshold_db:g} dB")
    ax.set_xlabel("segment vocalness (dB RMS of vocal stem)")
    ax.set_ylabel("probability of the true singer")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="best")
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
