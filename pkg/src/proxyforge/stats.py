"""Per-experiment summaries and the sensitivity / directionality measures."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special
from scipy.stats import rankdata

from .data import ExperimentPanel


class StatsError(ValueError):
    pass


class EmptyInput(StatsError):
    pass


class LengthMismatch(StatsError):
    pass


class ZeroVariance(StatsError):
    pass


@dataclass(frozen=True)
class SensitivityConfig:
    alpha: float = 0.05
    clamp: float | None = None
    """IQR multiplier for clamping |t| before averaging; ``None`` disables it."""

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.clamp is not None and self.clamp < 0:
            raise ValueError("IQR clamp multiplier must be nonnegative")


def _t_cdf_upper(t: float, df: int) -> float:
    """P(T > t) for t >= 0 via the regularized incomplete beta function."""
    return 0.5 * special.betainc(df / 2.0, 0.5, df / (df + t * t))


@lru_cache(maxsize=256)
def t_critical(alpha: float, df: int, tol: float = 1e-10) -> float:
    """Two-sided Student-t critical value: P(|T_df| > tau) = alpha.

    Found by bisection on the incomplete-beta tail probability.
    """
    if df < 1:
        raise ValueError("df must be at least 1")
    target = alpha / 2.0
    lo, hi = 0.0, 1.0
    while _t_cdf_upper(hi, df) > target:
        hi *= 2.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _t_cdf_upper(mid, df) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def jackknife_se(values: np.ndarray, axis: int = 0) -> np.ndarray:
    """Leave-one-out jackknife standard error of the mean along ``axis``."""
    v = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    n = v.shape[0]
    if n < 2:
        raise ValueError("jackknife needs at least two observations")
    loo = (v.sum(axis=0) - v) / (n - 1)
    dev = loo - loo.mean(axis=0)
    return np.sqrt((n - 1) / n * np.sum(dev * dev, axis=0))


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    se: float
    t: float
    df: int
    significant: bool
    direction: int
    degenerate: bool = False


@dataclass(frozen=True)
class MetricSummaryTable:
    """Summaries for every (experiment, metric) cell.

    Columns are the panel's auxiliary metrics followed by the long-term north
    star. ``t`` is NaN where ``se`` is zero; those cells are flagged
    ``degenerate`` and never count as significant.
    """

    experiments: tuple[str, ...]
    metric_ids: tuple[str, ...]
    mean: np.ndarray
    se: np.ndarray
    t: np.ndarray
    df: int
    tau: float
    alpha: float

    @property
    def degenerate(self) -> np.ndarray:
        return self.se == 0

    @property
    def significant(self) -> np.ndarray:
        return np.abs(np.nan_to_num(self.t, nan=0.0)) > self.tau

    @property
    def direction(self) -> np.ndarray:
        return np.where(self.significant, np.sign(self.mean), 0).astype(int)

    def column(self, metric_id: str) -> int:
        return self.metric_ids.index(metric_id)

    def cell(self, experiment: int, metric: int | str) -> MetricSummary:
        m = self.column(metric) if isinstance(metric, str) else metric
        t = float(self.t[experiment, m])
        sig = bool(self.significant[experiment, m])
        return MetricSummary(float(self.mean[experiment, m]), float(self.se[experiment, m]), t, self.df,
                             sig, int(self.direction[experiment, m]), bool(self.degenerate[experiment, m]))


def summarize_buckets(values: np.ndarray, alpha: float = 0.05) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Mean, jackknife se, t and critical value for bucket data of shape (N, ...)."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    mean = values.mean(axis=0)
    se = jackknife_se(values, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, mean / np.where(se > 0, se, 1.0), np.nan)
    return mean, se, t, t_critical(alpha, n - 1)


def summarize(panel: ExperimentPanel, cfg: SensitivityConfig = SensitivityConfig()) -> MetricSummaryTable:
    data = np.concatenate([panel.X, panel.Y[:, :, None]], axis=2)
    mean, se, t, tau = summarize_buckets(data, cfg.alpha)
    ids = panel.metric_ids + (panel.registry.north_star_long.metric_id,)
    return MetricSummaryTable(panel.experiments, ids, mean, se, t, panel.n_buckets - 1, tau, cfg.alpha)


def _finite_t(t_stats) -> np.ndarray:
    t = np.asarray(t_stats, dtype=float).ravel()
    if t.size == 0:
        raise EmptyInput("no test statistics supplied")
    t = t[~np.isnan(t)]
    if t.size == 0:
        raise EmptyInput("every test statistic is degenerate")
    return t


def binary_sensitivity(t_stats, tau: float) -> float:
    """Share of experiments with |t| above ``tau``. NaN (degenerate) entries are skipped."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    t = _finite_t(t_stats)
    return float(np.mean(np.abs(t) > tau))


def iqr_cap(values, multiplier: float = 1.5) -> float:
    """Q3 + multiplier * IQR with linearly interpolated quartiles."""
    q1, q3 = np.percentile(values, [25, 75], method="linear")
    return float(q3 + multiplier * (q3 - q1))


def average_sensitivity(t_stats, clamp: float | None = None) -> float:
    """Mean |t|, optionally capping values above the IQR fence of the |t| sample."""
    a = np.abs(_finite_t(t_stats))
    if clamp is not None:
        a = np.minimum(a, iqr_cap(a, clamp))
    return float(a.mean())


def _pair(x, y, min_len: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise LengthMismatch(f"series lengths differ: {x.size} vs {y.size}")
    if x.size < min_len:
        raise LengthMismatch(f"need at least {min_len} experiments, got {x.size}")
    return x, y


def _zscore(v: np.ndarray) -> np.ndarray:
    sd = v.std()
    if sd == 0:
        raise ZeroVariance("cannot standardize a constant series")
    return (v - v.mean()) / sd


def directionality_mse(x_means, y_means, standardize: bool = False) -> float:
    x, y = _pair(x_means, y_means, 2)
    if standardize:
        x, y = _zscore(x), _zscore(y)
    return float(np.mean((y - x) ** 2))


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ZeroVariance("correlation is undefined for a constant series")
    r = float(dx @ dy) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def directionality_corr(x_means, y_means, method: str = "pearson") -> float:
    x, y = _pair(x_means, y_means, 3)
    if method == "spearman":
        x, y = rankdata(x), rankdata(y)
    elif method != "pearson":
        raise ValueError(f"unknown correlation method {method!r}")
    return pearson(x, y)
