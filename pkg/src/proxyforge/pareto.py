"""Pareto archives, front extraction and the area under the Pareto front (AUPF).

Both objectives are maximized. Two searches are offered:

* :func:`random_search` samples weights uniformly on the unit cube and keeps the
  non-dominated ones;
* :func:`binned_search` splits the sensitivity axis into bins and, per bin,
  maximizes directionality under the bin constraint with DIRECT-L on a
  penalized objective.
"""

from __future__ import annotations

import bisect
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .data import ExperimentPanel
from .direct import direct_l
from .proxy import BS_CORR, ObjectiveConfig, ObjectivePoint, ProxyEvaluator, normalize
from .rng import substream

ARCHIVE_CAPACITY = 10_000
SAMPLE_CHUNK = 1024
PENALTY = 10.0
MIN_INFEASIBLE_DISTANCE = 1e-3


class KindMismatch(ValueError):
    pass


class PointBelowReference(ValueError):
    pass


def _xy(p) -> tuple[float, float]:
    if isinstance(p, ObjectivePoint):
        return p.sensitivity, p.directionality
    x, y = p
    return float(x), float(y)


def dominates(p, q) -> bool:
    """True if ``p`` is at least as good as ``q`` in both objectives and differs from it."""
    if isinstance(p, ObjectivePoint) and isinstance(q, ObjectivePoint) and p.kind != q.kind:
        raise KindMismatch(f"cannot compare {p.kind} with {q.kind}")
    (px, py), (qx, qy) = _xy(p), _xy(q)
    return px >= qx and py >= qy and (px, py) != (qx, qy)


def nondominated(points: Sequence) -> list[int]:
    """Brute-force O(S^2) filter; indices of non-dominated points, first copy of duplicates only."""
    xy = [_xy(p) for p in points]
    keep = []
    seen = set()
    for i, p in enumerate(xy):
        if p in seen:
            continue
        if any(dominates(q, p) for q in xy):
            continue
        seen.add(p)
        keep.append(i)
    return keep


@dataclass
class ArchiveEntry:
    weights: np.ndarray
    point: ObjectivePoint


class ParetoArchive:
    """Mutually non-dominated entries kept sorted by ascending sensitivity.

    Sorted that way, directionality is strictly descending. When more than
    ``capacity`` entries would be kept, the interior entry with the smallest
    exclusive area (the one whose removal loses the least hypervolume) is
    evicted; the two extreme entries are never evicted.
    """

    def __init__(self, kind: tuple[str, str] = BS_CORR.kind, capacity: int = ARCHIVE_CAPACITY):
        self.kind = kind
        self.capacity = capacity
        self.entries: list[ArchiveEntry] = []
        self._xs: list[float] = []
        self.evaluations = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def points(self) -> list[ObjectivePoint]:
        return [e.point for e in self.entries]

    def insert(self, weights, point: ObjectivePoint) -> bool:
        """Add a candidate unless something already in the archive dominates or equals it."""
        if point.kind != self.kind:
            raise KindMismatch(f"archive holds {self.kind} points, got {point.kind}")
        x, y = point.sensitivity, point.directionality
        i = bisect.bisect_left(self._xs, x)
        # The first entry with sensitivity >= x has the best directionality among them.
        if i < len(self.entries) and self.entries[i].point.directionality >= y:
            return False
        # Entries with sensitivity <= x and directionality <= y form a contiguous run ending at j.
        j = bisect.bisect_right(self._xs, x)
        lo = j
        while lo > 0 and self.entries[lo - 1].point.directionality <= y:
            lo -= 1
        del self.entries[lo:j]
        del self._xs[lo:j]
        self.entries.insert(lo, ArchiveEntry(np.asarray(weights, dtype=float), point))
        self._xs.insert(lo, x)
        if len(self.entries) > self.capacity:
            self._evict()
        return True

    def _evict(self) -> None:
        e = self.entries
        best, best_area = None, math.inf
        for k in range(1, len(e) - 1):
            area = ((e[k].point.sensitivity - e[k - 1].point.sensitivity)
                    * (e[k].point.directionality - e[k + 1].point.directionality))
            if area < best_area:
                best, best_area = k, area
        if best is not None:
            del e[best]
            del self._xs[best]

    def merge(self, other: ParetoArchive) -> None:
        for entry in other.entries:
            self.insert(entry.weights, entry.point)
        self.evaluations += other.evaluations


def archive_insert(archive: ParetoArchive, candidate: ArchiveEntry | tuple) -> ParetoArchive:
    weights, point = (candidate.weights, candidate.point) if isinstance(candidate, ArchiveEntry) else candidate
    archive.insert(weights, point)
    return archive


def hypervolume_2d(points: Iterable, reference=(0.0, 0.0), strict: bool = True) -> float:
    """Area dominated by ``points`` and bounded below by ``reference``.

    With ``strict`` a point below the reference in either coordinate raises
    :class:`PointBelowReference`; otherwise such points are dropped (they
    enclose no area above the reference anyway).
    """
    rx, ry = _xy(reference)
    pts = []
    for p in points:
        x, y = _xy(p)
        if x < rx or y < ry:
            if strict:
                raise PointBelowReference(f"point ({x}, {y}) lies below reference ({rx}, {ry})")
            continue
        pts.append((x, y))
    front = sorted({pts[i] for i in nondominated(pts)})
    area, prev_x = 0.0, rx
    for x, y in front:
        area += (x - prev_x) * (y - ry)
        prev_x = x
    return area


@dataclass(frozen=True)
class BinSpec:
    edges: tuple[float, ...]

    def __post_init__(self):
        e = tuple(float(v) for v in self.edges)
        object.__setattr__(self, "edges", e)
        if len(e) < 2:
            raise ValueError("need at least two bin edges")
        if e[0] != 0:
            raise ValueError("the first bin edge must be 0")
        if any(b <= a for a, b in zip(e, e[1:])):
            raise ValueError("bin edges must be strictly increasing")

    @classmethod
    def uniform(cls, upper: float, count: int = 14) -> BinSpec:
        return cls(tuple(np.linspace(0.0, upper, count)))

    @property
    def count(self) -> int:
        return len(self.edges)

    def interval(self, b: int) -> tuple[float, float, bool]:
        """(low, high, closed_on_the_right) for bin ``b``; only the last bin is closed."""
        return self.edges[b], self.edges[b + 1], b == len(self.edges) - 2

    def contains(self, b: int, s):
        lo, hi, closed = self.interval(b)
        s = np.asarray(s)
        return (s >= lo) & ((s <= hi) if closed else (s < hi))


@dataclass(frozen=True)
class SearchBudget:
    max_evaluations: int
    seed: int = 0

    def __post_init__(self):
        if self.max_evaluations < 1:
            raise ValueError("max_evaluations must be at least 1")


@dataclass
class ParetoResult:
    algorithm: str
    metric_ids: tuple[str, ...]
    config: ObjectiveConfig
    entries: list[ArchiveEntry]
    evaluations: int
    infeasible_bins: list[int] = field(default_factory=list)
    bins: list[dict] = field(default_factory=list)
    wall_time_ms: float = 0.0

    @property
    def points(self) -> list[ObjectivePoint]:
        return [e.point for e in self.entries]

    def aupf(self, reference=(0.0, 0.0), strict: bool = True) -> float:
        return hypervolume_2d(self.points, reference, strict)

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "objectives": self.config.to_dict(),
            "metric_ids": list(self.metric_ids),
            "entries": [{"weights": {m: float(w) for m, w in zip(self.metric_ids, e.weights)},
                         "sensitivity": e.point.sensitivity,
                         "directionality": e.point.directionality} for e in self.entries],
            "infeasible_bins": list(self.infeasible_bins),
            "bins": self.bins,
            "evaluations": self.evaluations,
            "wall_time_ms": self.wall_time_ms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ParetoResult:
        cfg = ObjectiveConfig(**d["objectives"])
        ids = tuple(d["metric_ids"])
        entries = [ArchiveEntry(np.array([e["weights"][m] for m in ids], dtype=float),
                                ObjectivePoint(e["sensitivity"], e["directionality"], cfg.kind))
                   for e in d["entries"]]
        return cls(d["algorithm"], ids, cfg, entries, d["evaluations"], list(d.get("infeasible_bins", [])),
                   list(d.get("bins", [])), d.get("wall_time_ms", 0.0))


def _pool_map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def random_search(panel: ExperimentPanel, cfg: ObjectiveConfig = BS_CORR, budget: SearchBudget | int = 1000,
                  threads: int = 1, evaluator: ProxyEvaluator | None = None) -> ParetoResult:
    """Uniform random search over [0, 1]^M weights, keeping the non-dominated ones.

    Sample ``s`` lives in chunk ``s // 1024``, whose draws come from
    ``substream(seed, "random_search", chunk)``; chunks are evaluated in
    parallel but inserted in sample order, so the result does not depend on
    ``threads``.
    """
    if isinstance(budget, int):
        budget = SearchBudget(budget)
    start = time.perf_counter()
    ev = evaluator or ProxyEvaluator(panel, cfg)
    m = ev.n_metrics
    total = budget.max_evaluations
    chunks = [(c, min(SAMPLE_CHUNK, total - c * SAMPLE_CHUNK)) for c in range(math.ceil(total / SAMPLE_CHUNK))]

    def run(chunk):
        c, size = chunk
        W = substream(budget.seed, "random_search", c).random((size, m))
        sens, direc = ev.evaluate_batch(W)
        return W, sens, direc

    archive = ParetoArchive(cfg.kind)
    for W, sens, direc in _pool_map(run, chunks, threads):
        for w, s, d in zip(W, sens, direc):
            archive.insert(normalize(w), ObjectivePoint(float(s), float(d), cfg.kind))
    return ParetoResult("random", panel.metric_ids, cfg, list(archive.entries), total,
                        wall_time_ms=(time.perf_counter() - start) * 1000)


def evaluation_log(panel: ExperimentPanel, cfg: ObjectiveConfig, budget: SearchBudget
                   ) -> tuple[np.ndarray, list[ObjectivePoint]]:
    """Every weight vector and point :func:`random_search` would visit, in order."""
    ev = ProxyEvaluator(panel, cfg)
    ws, pts = [], []
    total = budget.max_evaluations
    for c in range(math.ceil(total / SAMPLE_CHUNK)):
        size = min(SAMPLE_CHUNK, total - c * SAMPLE_CHUNK)
        W = substream(budget.seed, "random_search", c).random((size, ev.n_metrics))
        s, d = ev.evaluate_batch(W)
        ws.append(W)
        pts += [ObjectivePoint(float(a), float(b), cfg.kind) for a, b in zip(s, d)]
    return np.vstack(ws), pts


def default_bins(evaluator: ProxyEvaluator, count: int = 14) -> BinSpec:
    """Equal-width bins from 0 to the best single-metric sensitivity."""
    upper = max(p.sensitivity for p in evaluator.single_metric_points())
    if upper <= 0:
        raise ValueError("no single metric has positive sensitivity; pass explicit bin edges")
    return BinSpec.uniform(upper, count)


def _solve_bin(ev: ProxyEvaluator, bins: BinSpec, b: int, budget: int) -> dict:
    lo, hi, closed = bins.interval(b)
    best = {"directionality": -math.inf, "sensitivity": None, "weights": None}

    def objective(P):
        sens, direc = ev.evaluate_batch(P)
        inside = bins.contains(b, sens)
        dist = np.maximum(lo - sens, 0.0) + np.maximum(sens - hi, 0.0)
        dist = np.where(inside, 0.0, np.maximum(dist, MIN_INFEASIBLE_DISTANCE))
        if inside.any():
            # Feasibility is judged on the true sensitivity, not on the penalized value.
            k = int(np.argmax(np.where(inside, direc, -np.inf)))
            if direc[k] > best["directionality"]:
                best.update(directionality=float(direc[k]), sensitivity=float(sens[k]), weights=P[k].copy())
        return -(direc - PENALTY * dist)

    res = direct_l(objective, ev.n_metrics, budget)
    row = {"bin": b, "low": lo, "high": hi, "closed": closed, "evaluations": res.evaluations,
           "feasible": best["weights"] is not None}
    if row["feasible"]:
        row.update(sensitivity=best["sensitivity"], directionality=best["directionality"],
                   weights=normalize(best["weights"]))
    return row


def binned_search(panel: ExperimentPanel, cfg: ObjectiveConfig = BS_CORR, bins: BinSpec | int = 14,
                  per_bin_budget: int = 4000, threads: int = 1,
                  evaluator: ProxyEvaluator | None = None) -> ParetoResult:
    """Per sensitivity bin, maximize directionality subject to sensitivity in the bin.

    DIRECT-L maximizes ``directionality - 10 * distance(sensitivity, bin)``.
    Among all points the solver evaluates, the one with the highest
    directionality whose true sensitivity lies in the bin is kept; a bin where
    no evaluated point falls inside is reported infeasible.
    """
    start = time.perf_counter()
    ev = evaluator or ProxyEvaluator(panel, cfg)
    if isinstance(bins, int):
        bins = default_bins(ev, bins)
    if per_bin_budget < 2 * ev.n_metrics + 1:
        raise ValueError(f"per_bin_budget must be at least {2 * ev.n_metrics + 1}")
    rows = _pool_map(lambda b: _solve_bin(ev, bins, b, per_bin_budget), range(bins.count - 1), threads)
    archive = ParetoArchive(cfg.kind)
    for row in rows:
        if row["feasible"]:
            archive.insert(row["weights"], ObjectivePoint(row["sensitivity"], row["directionality"], cfg.kind))
    infeasible = [r["bin"] for r in rows if not r["feasible"]]
    table = []
    for r in rows:
        r = dict(r)
        if "weights" in r:
            r["weights"] = [float(v) for v in r["weights"]]
        table.append(r)
    return ParetoResult("binned", panel.metric_ids, cfg, list(archive.entries),
                        sum(r["evaluations"] for r in rows), infeasible, table,
                        wall_time_ms=(time.perf_counter() - start) * 1000)
