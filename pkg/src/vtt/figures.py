"""Report figures rendered to files alongside the delimited outputs.

Figures are advisory: the CSV files are the byte-stable record, these PNGs
are for eyeballing runs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def loss_curve(rows: list[dict], path) -> None:
    """Total plus per-term model losses over training steps."""
    if not rows:
        return
    steps = [r["step"] for r in rows]
    keys = [k for k in rows[0] if k != "step"]
    fig, ax = plt.subplots(figsize=(7, 4))
    for key in sorted(keys, key=lambda k: (k != "total", k)):
        ax.plot(steps, [r.get(key, np.nan) for r in rows],
                lw=2 if key == "total" else 1, label=key)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8, ncol=2)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def return_curve(rows: list[dict], path) -> None:
    """Episode returns with a running mean and success markers."""
    if not rows:
        return
    eps = np.array([r["episode"] for r in rows])
    rets = np.array([r["return"] for r in rows])
    succ = np.array([r["success"] for r in rows], dtype=bool)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(eps, rets, alpha=0.35, lw=0.8, label="return")
    if len(rets) >= 10:
        k = min(25, max(5, len(rets) // 10))
        smooth = np.convolve(rets, np.ones(k) / k, mode="valid")
        ax.plot(eps[k - 1:], smooth, lw=2, label=f"mean({k})")
    if succ.any():
        ax.plot(eps[succ], rets[succ], ".", ms=4, label="success")
    ax.set_xlabel("episode")
    ax.set_ylabel("return")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def proportion_plot(series, path) -> None:
    """Visual vs tactile attention shares over an episode, contact shaded."""
    t = np.arange(len(series))
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(t, series.visual, label="visual", lw=1.5)
    ax.plot(t, series.tactile, label="tactile", lw=1.5)
    contact = series.contact > 0.5
    if contact.any():
        ax.fill_between(t, 0, 1, where=contact, alpha=0.15, step="mid",
                        label="in contact")
    ax.set_xlabel("t")
    ax.set_ylabel("attention share")
    ax.set_ylim(0, 1)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
