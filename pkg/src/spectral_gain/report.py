"""File outputs: plain-text matrices, grayscale maps, and matplotlib figures.

Everything renders to files (Agg backend); nothing here is needed by the
numerical core, so plotting stays an optional presentation layer.  Matrix
text files hold one row per line with space-separated decimals, so any
external tool can re-plot them.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_COLORS = ["tab:red", "tab:green", "tab:blue", "black", "tab:orange", "tab:purple"]


def save_matrix(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError(f"matrix files are 2-D, got shape {arr.shape}")
    with open(path, "w") as f:
        for row in arr:
            f.write(" ".join(f"{v:.12g}" for v in row) + "\n")


def load_matrix(path) -> np.ndarray:
    rows = [[float(v) for v in line.split()] for line in Path(path).read_text().splitlines() if line]
    return np.array(rows)


def save_grayscale(path, arr: np.ndarray) -> None:
    """Min-max scaled grayscale map of a 2-D array."""
    arr = np.asarray(arr, dtype=np.float64)
    lo, hi = float(arr.min()), float(arr.max())
    scaled = np.zeros_like(arr) if hi == lo else (arr - lo) / (hi - lo)
    plt.imsave(path, scaled, cmap="gray", vmin=0.0, vmax=1.0)


def center_dc(surface: np.ndarray) -> np.ndarray:
    """Roll a spectrum so the DC bin sits at the center of the image."""
    h, w = surface.shape
    return np.roll(surface, (h // 2, w // 2), axis=(0, 1))


def save_response_figure(path, derivative: np.ndarray, amplitude_db: np.ndarray,
                         title: str = "") -> None:
    """Side-by-side data derivative and dB spectrum (DC centered)."""
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.6))
    im0 = axes[0].imshow(derivative, cmap="gray")
    axes[0].set_title("data derivative")
    fig.colorbar(im0, ax=axes[0], fraction=0.046)
    im1 = axes[1].imshow(center_dc(amplitude_db), cmap="viridis")
    axes[1].set_title("frequency response (dB)")
    fig.colorbar(im1, ax=axes[1], fraction=0.046)
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_training_figure(path, curves, labels) -> None:
    """Three panels per run set: Maximum Gain, losses, and error rates.

    Training series are solid, validation series dashed.
    """
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.8))
    for i, (curve, label) in enumerate(zip(curves, labels)):
        c = _COLORS[i % len(_COLORS)]
        ep = curve.epochs
        axes[0].plot(ep, curve.gains, color=c, label=label)
        axes[1].plot(ep, curve.train_loss, color=c, label=f"{label} train")
        axes[1].plot(ep, curve.val_loss, color=c, linestyle="--", label=f"{label} val")
        axes[2].plot(ep, curve.train_err, color=c)
        axes[2].plot(ep, curve.val_err, color=c, linestyle="--")
    axes[0].set_title("Maximum Gain")
    axes[0].set_ylabel("dB")
    axes[1].set_title("Train & Validation Loss")
    axes[2].set_title("Train & Validation Error Rate")
    for ax in axes:
        ax.set_xlabel("epoch")
        ax.grid(alpha=0.3)
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_diagnosis_figure(path, curve, report, label: str = "") -> None:
    """Gain curve with its variability series and any detected onset epoch."""
    fig, axes = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    axes[0].plot(curve.epochs, curve.gains, color="tab:red")
    axes[0].set_ylabel("Maximum Gain (dB)")
    axes[0].set_title(f"{label + ': ' if label else ''}{report.verdict}")
    axes[1].plot(report.variability_epochs, report.variability, color="tab:blue")
    axes[1].axhline(report.thresholds.low, color="gray", linestyle=":", label="low")
    axes[1].axhline(report.thresholds.high, color="black", linestyle=":", label="high")
    axes[1].set_ylabel("variability (dB)")
    axes[1].set_xlabel("epoch")
    axes[1].legend(fontsize=8)
    if report.onset_epoch is not None:
        for ax in axes:
            ax.axvline(report.onset_epoch, color="tab:purple", linestyle="--")
    for ax in axes:
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
