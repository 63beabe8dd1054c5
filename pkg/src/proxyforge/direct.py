"""Locally biased DIviding RECTangles (DIRECT-L) on the unit hypercube.

Follows Gablonsky and Kelley's locally biased variant of Jones' DIRECT:

* every hyperrectangle is sampled at its center; side lengths are powers of 1/3;
* a rectangle's size is its longest side, so rectangles fall into few size groups;
* per iteration, at most one rectangle per size group (the lowest value, oldest on
  ties) is considered, and only those on the lower-right convex hull of
  (size, value) that also pass the ``eps`` sufficient-decrease test are divided;
* a selected rectangle is trisected along all of its longest sides, in order of
  increasing best value of the two new samples on each side.

There is no randomness anywhere, so results depend only on the objective and the budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np


class NonFiniteObjective(ValueError):
    pass


@dataclass
class DirectResult:
    x: np.ndarray
    value: float
    evaluations: int
    iterations: int


def _check(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float).ravel()
    if not np.all(np.isfinite(values)):
        raise NonFiniteObjective("objective returned NaN or infinity; apply a finite penalty instead")
    return values


def _hull_select(level: np.ndarray, fvals: np.ndarray, fmin: float, eps: float) -> list[int]:
    """Indices of potentially optimal rectangles, DIRECT-L rule.

    ``level`` is the number of trisections of each rectangle's longest side.
    """
    order = np.lexsort((np.arange(len(fvals)), fvals, -level))  # ascending size, then value, then age
    first = np.ones(len(order), dtype=bool)
    first[1:] = level[order][1:] != level[order][:-1]
    cand = [int(i) for i in order[first]]
    d = np.array([0.5 * 3.0 ** (-float(level[i])) for i in cand])
    f = np.array([fvals[i] for i in cand])
    chosen = []
    threshold = fmin - eps * abs(fmin)
    for j in range(len(cand)):
        smaller = d < d[j]
        larger = d > d[j]
        k_low = np.max((f[j] - f[smaller]) / (d[j] - d[smaller])) if smaller.any() else -math.inf
        k_high = np.min((f[larger] - f[j]) / (d[larger] - d[j])) if larger.any() else math.inf
        if k_low > k_high or k_high <= 0:
            continue
        if math.isfinite(k_high) and f[j] - k_high * d[j] > threshold:
            continue
        chosen.append(cand[j])
    return chosen


def direct_l(f: Callable[[np.ndarray], np.ndarray], dim: int, budget: int, eps: float = 1e-4) -> DirectResult:
    """Minimize a batched objective over [0, 1]^dim with at most ``budget`` evaluations.

    ``f`` maps an (S, dim) array of points to S values.
    """
    if dim < 1:
        raise ValueError("dim must be positive")
    if budget < 2 * dim + 1:
        raise ValueError(f"budget must be at least 2*dim+1 = {2 * dim + 1}")

    centers = [np.full(dim, 0.5)]
    ks = [np.zeros(dim, dtype=int)]
    levels = [0]
    fvals = list(_check(f(centers[0][None, :])))
    evals, iterations = 1, 0

    while True:
        fv = np.asarray(fvals)
        level = np.asarray(levels)
        ibest = int(np.argmin(fv))
        selected = _hull_select(level, fv, float(fv[ibest]), eps)
        # Largest rectangles first; only matters when the budget cuts an iteration short.
        selected.sort(key=lambda i: (level[i], i))
        plan = []
        needed = 0
        for i in selected:
            long_dims = np.flatnonzero(ks[i] == level[i])
            if evals + needed + 2 * len(long_dims) > budget:
                break
            plan.append((i, long_dims))
            needed += 2 * len(long_dims)
        if not plan:
            break
        iterations += 1
        points = []
        for i, long_dims in plan:
            delta = 3.0 ** (-(level[i] + 1))
            for j in long_dims:
                for sgn in (1.0, -1.0):
                    p = centers[i].copy()
                    p[j] += sgn * delta
                    points.append(p)
        values = _check(f(np.array(points)))
        evals += len(points)
        pos = 0
        for i, long_dims in plan:
            n = len(long_dims)
            vals = values[pos:pos + 2 * n].reshape(n, 2)
            pts = points[pos:pos + 2 * n]
            pos += 2 * n
            order = np.lexsort((long_dims, vals.min(axis=1)))
            k = ks[i].copy()
            for o in order:
                k[long_dims[o]] += 1
                for s in range(2):
                    centers.append(pts[2 * o + s])
                    ks.append(k.copy())
                    levels.append(int(k.min()))
                    fvals.append(float(vals[o, s]))
            ks[i] = k
            levels[i] = int(k.min())

    fv = np.asarray(fvals)
    ibest = int(np.argmin(fv))
    return DirectResult(centers[ibest].copy(), float(fv[ibest]), evals, iterations)


def direct_l_maximize(f: Callable, dim: int, budget: int, locally_biased: bool = True,
                      batched: bool = False, eps: float = 1e-4) -> tuple[np.ndarray, float]:
    """Maximize ``f`` over [0, 1]^dim; returns ``(argmax estimate, value)``.

    With ``batched`` the objective receives an (S, dim) array and returns S
    values; otherwise it is called once per point.
    """
    if not locally_biased:
        raise NotImplementedError("only the locally biased variant is provided")
    if batched:
        def neg(points):
            return -np.asarray(f(points), dtype=float)
    else:
        def neg(points):
            return -np.array([float(f(p)) for p in points])
    res = direct_l(neg, dim, budget, eps)
    return res.x, -res.value
