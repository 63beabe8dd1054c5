"""Contingency classification of proxy vs. north-star test outcomes and the proxy score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ExperimentPanel
from .proxy import ObjectiveConfig, evaluate_proxy
from .stats import MetricSummary, summarize_buckets

DIRECTIONS = (-1, 0, 1)


@dataclass(frozen=True)
class ContingencyLabel:
    proxy_direction: int
    northstar_direction: int

    @property
    def is_detection(self) -> bool:
        return self.proxy_direction != 0 and self.proxy_direction == self.northstar_direction

    @property
    def is_mistake(self) -> bool:
        return self.proxy_direction * self.northstar_direction == -1


def classify(proxy_summary: MetricSummary, ns_summary: MetricSummary) -> ContingencyLabel:
    def direction(s: MetricSummary) -> int:
        return int(np.sign(s.mean)) if s.significant else 0

    return ContingencyLabel(direction(proxy_summary), direction(ns_summary))


@dataclass(frozen=True)
class ScoreReport:
    detections: int
    mistakes: int
    ns_significant: int
    proxy_score: float | None
    recall: float | None
    precision: float | None
    binary_sensitivity_proxy: float
    counts: dict
    """(proxy_direction, northstar_direction) -> count for all nine cells."""

    def to_dict(self) -> dict:
        return {"detections": self.detections, "mistakes": self.mistakes,
                "ns_significant": self.ns_significant, "proxy_score": self.proxy_score,
                "recall": self.recall, "precision": self.precision,
                "binary_sensitivity_proxy": self.binary_sensitivity_proxy,
                "contingency": [{"proxy_direction": p, "northstar_direction": n, "count": c}
                                for (p, n), c in self.counts.items()]}


def score(labels) -> ScoreReport:
    """Aggregate labels into the 3x3 table and the proxy score.

    The score is (detections - mistakes) divided by the number of experiments
    whose north star is significant, which keeps it in [-1, 1]. With no
    significant north star, score and recall are ``None``.
    """
    labels = list(labels)
    if not labels:
        raise ValueError("no labels to score")
    counts = {(p, n): 0 for p in DIRECTIONS[::-1] for n in DIRECTIONS}
    for lab in labels:
        counts[(lab.proxy_direction, lab.northstar_direction)] += 1
    detections = counts[(1, 1)] + counts[(-1, -1)]
    mistakes = counts[(1, -1)] + counts[(-1, 1)]
    ns_sig = sum(c for (p, n), c in counts.items() if n != 0)
    proxy_sig = sum(c for (p, n), c in counts.items() if p != 0)
    ps = (detections - mistakes) / ns_sig if ns_sig else None
    recall = detections / ns_sig if ns_sig else None
    precision = detections / (detections + mistakes) if detections + mistakes else None
    return ScoreReport(detections, mistakes, ns_sig, ps, recall, precision, proxy_sig / len(labels), counts)


def labels_from_tests(proxy_mean, proxy_t, ns_mean, ns_t, tau: float) -> list[ContingencyLabel]:
    def directions(mean, t):
        t = np.nan_to_num(np.asarray(t, dtype=float), nan=0.0)
        return np.where(np.abs(t) > tau, np.sign(mean), 0).astype(int)

    return [ContingencyLabel(int(p), int(n))
            for p, n in zip(directions(proxy_mean, proxy_t), directions(ns_mean, ns_t))]


def proxy_labels(panel: ExperimentPanel, w, alpha: float = 0.05) -> tuple[list[ContingencyLabel], np.ndarray]:
    """Labels for every experiment plus the long-term north-star means."""
    ev = evaluate_proxy(panel, w, ObjectiveConfig(alpha=alpha))
    y_mean, _, y_t, _ = summarize_buckets(panel.Y, alpha)
    return labels_from_tests(ev.mean, ev.t, y_mean, y_t, ev.tau), y_mean


def score_weights(panel: ExperimentPanel, w, alpha: float = 0.05) -> ScoreReport:
    return score(proxy_labels(panel, w, alpha)[0])


def neutral_ns_breakdown(labels, ns_means) -> dict[int, float | None]:
    """Mean long-term north-star effect over NS-neutral experiments, by proxy direction."""
    groups: dict[int, list[float]] = {d: [] for d in DIRECTIONS}
    for lab, y in zip(labels, ns_means):
        if lab.northstar_direction == 0:
            groups[lab.proxy_direction].append(float(y))
    return {d: (float(np.mean(v)) if v else None) for d, v in groups.items()}


def best_entry_by_score(result, panel: ExperimentPanel, alpha: float = 0.05) -> tuple[int, ScoreReport]:
    """Index of the front entry with the highest proxy score on ``panel`` (first on ties)."""
    best_i, best = None, None
    for i, entry in enumerate(result.entries):
        rep = score_weights(panel, entry.weights, alpha)
        value = rep.proxy_score if rep.proxy_score is not None else -np.inf
        if best is None or value > (best.proxy_score if best.proxy_score is not None else -np.inf):
            best_i, best = i, rep
    if best_i is None:
        raise ValueError("result has no entries")
    return best_i, best
