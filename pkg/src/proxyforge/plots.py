"""Plot-ready tables and matplotlib renderings of fronts and metric scatters.

The CSV tables are the primary artifacts; figures are optional renderings of
the same rows, drawn with the non-interactive Agg backend.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

from .pareto import ParetoResult
from .proxy import normalize

FRONT_FIELDS = ("sensitivity", "directionality")
AXIS_LABELS = {"binary": "binary sensitivity", "average": "average sensitivity",
               "pearson": "Pearson correlation", "spearman": "Spearman correlation", "neg_mse": "negative MSE"}
SCATTER_FIELDS = ("metric_id", "binary_sensitivity", "correlation")


def front_rows(result: ParetoResult) -> tuple[list[str], list[list]]:
    """Front entries sorted by sensitivity, with weights renormalized to sum to one."""
    header = list(FRONT_FIELDS) + [f"weight_{m}" for m in result.metric_ids]
    entries = sorted(result.entries, key=lambda e: (e.point.sensitivity, -e.point.directionality))
    rows = [[e.point.sensitivity, e.point.directionality, *normalize(e.weights).tolist()] for e in entries]
    return header, rows


def scatter_rows(metric_ids, sensitivity, correlation) -> tuple[list[str], list[list]]:
    return list(SCATTER_FIELDS), [[m, float(s), float(c)] for m, s, c in zip(metric_ids, sensitivity, correlation)]


def _save(fig, path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=path.suffix, dir=path.parent)
    os.close(fd)
    try:
        fig.savefig(tmp, dpi=150, bbox_inches="tight", metadata={"Software": None} if path.suffix == ".png" else None)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _figure(*args, **kw):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt, plt.subplots(*args, **kw)


def plot_front(header: list[str], rows: list[list], path: str | os.PathLike, labels: tuple[str, str] = FRONT_FIELDS):
    """Front staircase on the left, stacked weights along the front on the right."""
    plt, (fig, (ax_front, ax_w)) = _figure(1, 2, figsize=(10, 4))
    data = np.array([r[:2] for r in rows], dtype=float).reshape(-1, 2)
    weights = np.array([r[2:] for r in rows], dtype=float).reshape(len(rows), -1)
    if len(data):
        # Boundary of the dominated region: height of the next point to the right.
        ax_front.step(data[:, 0], data[:, 1], where="pre", color="0.6", lw=1)
        ax_front.scatter(data[:, 0], data[:, 1], s=18, zorder=3)
    ax_front.set_xlabel(AXIS_LABELS.get(labels[0], labels[0]))
    ax_front.set_ylabel(AXIS_LABELS.get(labels[1], labels[1]))
    ax_front.set_title("Pareto front")

    x = np.arange(len(rows))
    bottom = np.zeros(len(rows))
    for k, name in enumerate(header[2:]):
        ax_w.bar(x, weights[:, k], bottom=bottom, label=name.removeprefix("weight_"))
        bottom += weights[:, k]
    ax_w.set_xticks(x)
    ax_w.set_xlabel("front entry (by sensitivity)")
    ax_w.set_ylabel("normalized weight")
    ax_w.set_ylim(0, 1)
    ax_w.set_title("Weights along the front")
    if weights.shape[1] <= 16:
        ax_w.legend(fontsize=7, bbox_to_anchor=(1.02, 1), loc="upper left")
    _save(fig, path)
    plt.close(fig)


def plot_scatter(rows: list[list], path: str | os.PathLike) -> None:
    """Per-metric binary sensitivity against correlation with the long-term north star."""
    plt, (fig, ax) = _figure(figsize=(5, 4))
    for metric_id, s, c in rows:
        ax.scatter(s, c, s=20, color="C0")
        ax.annotate(metric_id, (s, c), fontsize=7, xytext=(3, 3), textcoords="offset points")
    ax.set_xlabel("binary sensitivity")
    ax.set_ylabel("correlation with long-term north star")
    _save(fig, path)
    plt.close(fig)
