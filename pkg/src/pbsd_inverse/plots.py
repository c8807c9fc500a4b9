"""Static SVG figures. Output is byte-stable: fixed hash salt, no date stamp."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "pbsd-inverse", "svg.fonttype": "none", "figure.dpi": 100}


def _save(fig, path) -> None:
    fig.savefig(Path(path), format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def shapley_bar(summary: Sequence[tuple[str, float]], path, title: str = "Mean |Shapley value|") -> None:
    with plt.rc_context(_RC):
        names = [n for n, _ in summary][::-1]
        vals = [v for _, v in summary][::-1]
        fig, ax = plt.subplots(figsize=(6, 0.35 * len(names) + 1.2))
        ax.barh(names, vals, color="#3b6ea5")
        ax.set_xlabel("mean |contribution| to EAL")
        ax.set_title(title)
        fig.tight_layout()
        _save(fig, path)


def ale_plot(edges: np.ndarray, effect: np.ndarray, values: np.ndarray, feature: str, path) -> None:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(edges, effect, marker="o", ms=3, color="#a53b3b")
        lo = effect.min() if effect.size else 0.0
        ax.plot(values, np.full(values.shape, lo), "|", color="0.4", ms=8)  # rug
        ax.axhline(0.0, color="0.7", lw=0.8)
        ax.set_xlabel(feature)
        ax.set_ylabel("accumulated local effect")
        fig.tight_layout()
        _save(fig, path)


def convergence_plot(history: Sequence[tuple[float, float, float]], path) -> None:
    with plt.rc_context(_RC):
        h = np.asarray(history, dtype=float)
        gen = np.arange(h.shape[0])
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(gen, h[:, 0], label="best", color="#3b6ea5")
        ax.plot(gen, h[:, 1], label="mean", color="#a5843b", ls="--")
        ax.set_xlabel("generation")
        ax.set_ylabel("fitness (predicted EAL)")
        ax.legend()
        fig.tight_layout()
        _save(fig, path)


def parity_plot(y_true: np.ndarray, y_pred: np.ndarray, path, label: str = "test") -> None:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        ax.scatter(y_true, y_pred, s=8, alpha=0.7, color="#3b6ea5", label=label)
        lim = [min(y_true.min(), y_pred.min()), max(y_true.max(), y_pred.max())]
        ax.plot(lim, lim, color="0.5", lw=0.8)
        ax.set_xlabel("EAL")
        ax.set_ylabel("predicted EAL")
        ax.legend()
        fig.tight_layout()
        _save(fig, path)
