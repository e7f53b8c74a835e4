"""Report figures. Uses the Agg canvas directly so no display or global backend is touched."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure


def _save(fig: Figure, path, provenance: dict | None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    FigureCanvasAgg(fig)
    meta = {"Description": " ".join(f"{k}={v}" for k, v in (provenance or {}).items())}
    fig.savefig(path, dpi=100, metadata=meta)


def plot_nmi_trail(trail: list[tuple[int, float]], path, provenance: dict | None = None) -> None:
    fig = Figure(figsize=(6, 3.5))
    ax = fig.add_subplot()
    if trail:
        it, v = zip(*trail)
        ax.plot(it, v, marker=".", lw=1)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("iteration")
    ax.set_ylabel("NMI with previous assignment")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path, provenance)


def plot_projection(coords: np.ndarray, labels: np.ndarray, ratios: np.ndarray, path, title: str = "",
                    provenance: dict | None = None) -> None:
    fig = Figure(figsize=(5, 4.5))
    ax = fig.add_subplot()
    for c in np.unique(labels):
        sel = labels == c
        ax.scatter(coords[sel, 0], coords[sel, 1], s=10, alpha=0.75, label=f"cluster {c}")
    ax.set_xlabel(f"PC1 ({100 * ratios[0]:.1f}%)")
    ax.set_ylabel(f"PC2 ({100 * ratios[1]:.1f}%)")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8, markerscale=1.5)
    fig.tight_layout()
    _save(fig, path, provenance)


def plot_loss_history(rows: list[tuple], path, provenance: dict | None = None) -> None:
    """Pretraining curve from ``(epoch, train_loss, val_loss)`` rows."""
    fig = Figure(figsize=(6, 3.5))
    ax = fig.add_subplot()
    if rows:
        ep = [r[0] for r in rows]
        ax.plot(ep[1:], [r[1] for r in rows][1:], label="train")
        ax.plot(ep, [r[2] for r in rows], label="validation")
        ax.legend()
    ax.set_xlabel("epoch")
    ax.set_ylabel("masked MSE")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path, provenance)
