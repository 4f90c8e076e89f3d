"""PNG figures for CLI reports.

Figures are built on bare ``Figure`` objects with the Agg canvas, so nothing
touches pyplot's global state and parallel trials can plot safely.  The
``Software`` metadata entry is dropped to keep files byte-identical across runs.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from csihar.training import EvalReport

_PNG_META = {"Software": None}


def _save(fig: Figure, path) -> None:
    FigureCanvasAgg(fig)
    fig.savefig(path, format="png", dpi=100, metadata=_PNG_META)


def confusion_figure(report: EvalReport, path, title: str = "") -> None:
    conf = report.confusion
    k = len(report.classes)
    fig = Figure(figsize=(1.0 + 0.8 * k, 0.8 + 0.8 * k), layout="constrained")
    ax = fig.add_subplot()
    ax.imshow(conf, cmap="Blues", vmin=0)
    ax.set_xticks(range(k), report.classes, rotation=45, ha="right")
    ax.set_yticks(range(k), report.classes)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    threshold = conf.max() / 2 if conf.size else 0
    for i in range(k):
        for j in range(k):
            ax.text(j, i, str(conf[i, j]), ha="center", va="center",
                    color="white" if conf[i, j] > threshold else "black")  # fmt: skip
    ax.set_title(title or f"accuracy {report.accuracy:.3f}")
    _save(fig, path)


def loss_figure(history: Sequence[float], path, title: str = "training loss") -> None:
    fig = Figure(figsize=(5, 3.2), layout="constrained")
    ax = fig.add_subplot()
    ax.plot(np.arange(1, len(history) + 1), history, marker="o", markersize=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    _save(fig, path)


def spectrum_figure(spectra: dict[str, tuple[np.ndarray, np.ndarray]], original, path) -> None:
    """``spectra`` maps a mode name to ``(freqs, magnitudes)``; ``original`` is ``(freqs, magnitudes)``."""
    fig = Figure(figsize=(6, 3.5), layout="constrained")
    ax = fig.add_subplot()
    ax.semilogy(*original, color="black", lw=1.5, label="original")
    for mode, (freqs, mags) in spectra.items():
        ax.semilogy(freqs, mags, lw=1, label=mode)
    ax.set_xlabel("frequency (Hz)")
    ax.set_ylabel("magnitude")
    ax.legend()
    ax.grid(alpha=0.3)
    _save(fig, path)


def query_figure(scores: np.ndarray, labels: np.ndarray, classes: Sequence[str], path) -> None:
    """Per-window query probabilities, windows grouped by true class."""
    order = np.argsort(labels, kind="stable")
    fig = Figure(figsize=(6, 3.2), layout="constrained")
    ax = fig.add_subplot()
    for c, name in enumerate(classes):
        ax.plot(scores[order, c], marker=".", lw=0.8, label=f"P(activity = {name})")
    for boundary in np.flatnonzero(np.diff(labels[order])) + 0.5:
        ax.axvline(boundary, color="grey", ls="--", lw=0.8)
    ax.set_xlabel("held-out window (grouped by true class)")
    ax.set_ylabel("query probability")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize="small")
    _save(fig, path)
