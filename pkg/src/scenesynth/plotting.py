"""Benchmark figures, rendered off-screen to image files."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_multiview(rows: list[dict], path: str | Path) -> None:
    views = [r["views"] for r in rows]
    rates = [r["success_rate"] for r in rows]
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar([str(v) for v in views], rates, color="#4c72b0")
    for x, y in enumerate(rates):
        ax.text(x, y + 0.02, f"{y:.2f}", ha="center")
    ax.set_ylim(0, 1.1)
    ax.set_xlabel("views")
    ax.set_ylabel("success rate")
    ax.set_title("Multi-view optimization")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_frame_prediction(rows: list[dict], path: str | Path) -> None:
    idx = [r["plan"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.bar(idx, [r["violations_before"] for r in rows], color="#c44e52", label="before")
    ax.bar(idx, [r["violations_after"] for r in rows], color="#55a868", label="after")
    ax.set_xlabel("plan")
    ax.set_ylabel("smoothness violations")
    ax.set_title("Frame prediction refinement")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
