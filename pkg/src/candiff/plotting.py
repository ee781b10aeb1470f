"""Report figures written next to the JSON/CSV outputs (non-interactive backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .datamodel import SPEED, SWA, Lap  # noqa: E402
from .metrics import Envelope  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_lap(lap: Lap, path, envelope: Envelope | None = None, title: str = "") -> Path:
    """Speed and steering angle over distance, with the vehicle envelope shaded if given."""
    x = np.arange(len(lap)) * lap.spacing
    fig, axes = plt.subplots(2, 1, figsize=(10, 5.5), sharex=True)
    for ax, ch, label, lo_hi in (
        (axes[0], SPEED, "speed [m/s]", (envelope.speed_min, envelope.speed_max) if envelope else None),
        (axes[1], SWA, "steering angle [deg]", (envelope.swa_min, envelope.swa_max) if envelope else None),
    ):
        if lo_hi is not None:
            ax.fill_between(x, lo_hi[0], lo_hi[1], color="tab:gray", alpha=0.3, lw=0, label="envelope")
        ax.plot(x, lap.samples[:, ch], lw=0.8, color="tab:blue", label="lap")
        ax.set_ylabel(label)
    axes[0].legend(loc="upper right", fontsize=8)
    axes[1].set_xlabel("distance [m]")
    if title:
        axes[0].set_title(title)
    return _save(fig, path)


def plot_loss_curve(curve: Sequence[float], path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(np.arange(1, len(curve) + 1), curve, marker="o", ms=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("noise-prediction MSE")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_ablation(steps: Sequence[int], mse_acc95: Sequence[float], path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, mse_acc95, marker="o")
    ax.set_xlabel("reverse diffusion steps")
    ax.set_ylabel("MSE_acc95")
    ax.set_yscale("log")
    ax.grid(alpha=0.3, which="both")
    return _save(fig, path)
