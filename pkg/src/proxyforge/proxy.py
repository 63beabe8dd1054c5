"""Proxy metrics as nonnegative linear combinations of auxiliary metrics.

Two evaluation routes share one contract:

* :func:`evaluate_objectives` builds the bucket-level proxy series and runs the
  ordinary jackknife summary on it. It is the reference route.
* :class:`ProxyEvaluator` precomputes per-experiment metric means and the
  within-experiment bucket covariance once, then scores whole batches of
  weight vectors. For the mean, the jackknife standard error equals
  ``s / sqrt(N)``, and the bucket variance of the proxy is ``w' C_j w``, so
  this route is exact rather than approximate; it is what the searches use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from . import stats
from .data import ExperimentPanel


class AllZeroWeights(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


SENSITIVITY_KINDS = ("binary", "average")
DIRECTIONALITY_KINDS = ("pearson", "spearman", "neg_mse")


@dataclass(frozen=True)
class ObjectiveConfig:
    """Which sensitivity and directionality measures define the two objectives.

    ``neg_mse`` is the mean squared error negated so that both axes are
    maximized. MSE depends on the scale of the weights, so MSE runs always
    normalize weights to sum to one before evaluating.
    """

    sensitivity: str = "binary"
    directionality: str = "pearson"
    alpha: float = 0.05
    clamp: float | None = None
    standardize: bool = False

    def __post_init__(self):
        if self.sensitivity not in SENSITIVITY_KINDS:
            raise ValueError(f"sensitivity must be one of {SENSITIVITY_KINDS}")
        if self.directionality not in DIRECTIONALITY_KINDS:
            raise ValueError(f"directionality must be one of {DIRECTIONALITY_KINDS}")
        stats.SensitivityConfig(self.alpha, self.clamp)

    @property
    def kind(self) -> tuple[str, str]:
        return (self.sensitivity, self.directionality)

    @classmethod
    def from_name(cls, name: str, **kw) -> ObjectiveConfig:
        """``bs-corr`` or ``as-negmse``."""
        pairs = {"bs-corr": ("binary", "pearson"), "as-negmse": ("average", "neg_mse")}
        if name not in pairs:
            raise ValueError(f"unknown objective pair {name!r}; choose from {sorted(pairs)}")
        s, d = pairs[name]
        return cls(s, d, **kw)

    def to_dict(self) -> dict:
        return {"sensitivity": self.sensitivity, "directionality": self.directionality,
                "alpha": self.alpha, "clamp": self.clamp, "standardize": self.standardize}


BS_CORR = ObjectiveConfig()


@dataclass(frozen=True)
class ObjectivePoint:
    sensitivity: float
    directionality: float
    kind: tuple[str, str] = BS_CORR.kind

    def as_tuple(self) -> tuple[float, float]:
        return (self.sensitivity, self.directionality)


def as_weights(w, m: int | None = None) -> np.ndarray:
    w = np.asarray(w, dtype=float).ravel()
    if m is not None and w.size != m:
        raise DimensionMismatch(f"expected {m} weights, got {w.size}")
    if np.any(~np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and nonnegative")
    if not np.any(w > 0):
        raise AllZeroWeights("at least one weight must be positive")
    return w


def normalize(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    total = w.sum()
    if not total > 0:
        raise AllZeroWeights("weights sum to zero")
    return w / total


def proxy_series(panel: ExperimentPanel, w) -> np.ndarray:
    """Bucket-level proxy values, shape (N, J)."""
    w = np.asarray(w, dtype=float).ravel()
    if w.size != panel.X.shape[2]:
        raise DimensionMismatch(f"panel has {panel.X.shape[2]} metrics, got {w.size} weights")
    return panel.X @ w


def _sensitivity(t, cfg: ObjectiveConfig, tau: float) -> float:
    if cfg.sensitivity == "binary":
        return stats.binary_sensitivity(t, tau)
    return stats.average_sensitivity(t, cfg.clamp)


def _directionality(zbar, ybar, cfg: ObjectiveConfig) -> float:
    if cfg.directionality == "neg_mse":
        return -stats.directionality_mse(zbar, ybar, cfg.standardize)
    return stats.directionality_corr(zbar, ybar, cfg.directionality)


@dataclass(frozen=True)
class ProxyEvaluation:
    point: ObjectivePoint
    weights: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    t: np.ndarray
    tau: float


def evaluate_proxy(panel: ExperimentPanel, w, cfg: ObjectiveConfig = BS_CORR) -> ProxyEvaluation:
    """Reference evaluation: jackknife directly on the bucket-level proxy."""
    w = as_weights(w, panel.X.shape[2])
    if cfg.directionality == "neg_mse":
        w = normalize(w)
    z = proxy_series(panel, w)
    mean, se, t, tau = stats.summarize_buckets(z, cfg.alpha)
    ybar = panel.Y.mean(axis=0)
    point = ObjectivePoint(_sensitivity(t, cfg, tau), _directionality(mean, ybar, cfg), cfg.kind)
    return ProxyEvaluation(point, w, mean, se, t, tau)


def evaluate_objectives(panel: ExperimentPanel, w, cfg: ObjectiveConfig = BS_CORR) -> ObjectivePoint:
    return evaluate_proxy(panel, w, cfg).point


class ProxyEvaluator:
    """Batched objective evaluation against one immutable panel."""

    CHUNK = 256

    def __init__(self, panel: ExperimentPanel, cfg: ObjectiveConfig = BS_CORR):
        self.panel = panel
        self.cfg = cfg
        x = panel.X
        n = x.shape[0]
        if n < 2:
            raise ValueError("need at least two buckets")
        self.n_buckets = n
        self.n_metrics = x.shape[2]
        self.xbar = x.mean(axis=0)
        centered = x - self.xbar
        self.cov = np.einsum("ijm,ijk->jmk", centered, centered) / (n - 1)
        self.ybar = panel.Y.mean(axis=0)
        self.tau = stats.t_critical(cfg.alpha, n - 1)
        yc = self.ybar - self.ybar.mean()
        self._yc = yc
        self._yrank = rankdata(self.ybar) - (len(self.ybar) + 1) / 2.0

    def _prepare(self, W) -> np.ndarray:
        W = np.atleast_2d(np.asarray(W, dtype=float))
        if W.shape[1] != self.n_metrics:
            raise DimensionMismatch(f"expected {self.n_metrics} weights per row, got {W.shape[1]}")
        sums = W.sum(axis=1)
        if np.any(~(sums > 0)):
            raise AllZeroWeights("every weight vector needs a positive entry")
        if self.cfg.directionality == "neg_mse":
            W = W / sums[:, None]
        return W

    def moments(self, W) -> tuple[np.ndarray, np.ndarray]:
        """Per-experiment proxy means and t statistics, each of shape (S, J)."""
        W = self._prepare(W)
        zbar = W @ self.xbar.T
        var = np.empty_like(zbar)
        for lo in range(0, len(W), self.CHUNK):
            Wc = W[lo:lo + self.CHUNK]
            var[lo:lo + self.CHUNK] = np.einsum("sjk,sk->sj", np.einsum("sm,jmk->sjk", Wc, self.cov), Wc)
        var = np.maximum(var, 0.0)
        se = np.sqrt(var / self.n_buckets)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(se > 0, zbar / np.where(se > 0, se, 1.0), np.nan)
        return zbar, t

    def evaluate_batch(self, W) -> tuple[np.ndarray, np.ndarray]:
        """Sensitivity and directionality arrays of length S for S weight rows."""
        zbar, t = self.moments(W)
        finite = ~np.isnan(t)
        counts = finite.sum(axis=1)
        if np.any(counts == 0):
            raise stats.EmptyInput("every proxy test statistic is degenerate")
        at = np.where(finite, np.abs(t), 0.0)
        if self.cfg.sensitivity == "binary":
            sens = (at > self.tau).sum(axis=1) / counts
        else:
            if self.cfg.clamp is not None:
                sens = np.array([stats.average_sensitivity(row, self.cfg.clamp) for row in t])
            else:
                sens = at.sum(axis=1) / counts
        kind = self.cfg.directionality
        if kind == "neg_mse":
            x, y = zbar, self.ybar[None, :]
            if self.cfg.standardize:
                sd = x.std(axis=1, keepdims=True)
                if np.any(sd == 0) or self.ybar.std() == 0:
                    raise stats.ZeroVariance("cannot standardize a constant series")
                x = (x - x.mean(axis=1, keepdims=True)) / sd
                y = (y - y.mean()) / y.std()
            direc = -np.mean((y - x) ** 2, axis=1)
        else:
            if kind == "spearman":
                x = rankdata(zbar, axis=1) - (zbar.shape[1] + 1) / 2.0
                yc = self._yrank
            else:
                x = zbar - zbar.mean(axis=1, keepdims=True)
                yc = self._yc
            sxx = np.einsum("sj,sj->s", x, x)
            syy = float(yc @ yc)
            if np.any(sxx == 0) or syy == 0:
                raise stats.ZeroVariance("correlation is undefined for a constant series")
            direc = np.clip((x @ yc) / np.sqrt(sxx * syy), -1.0, 1.0)
        return sens.astype(float), direc

    def evaluate(self, w) -> ObjectivePoint:
        w = as_weights(w, self.n_metrics)
        s, d = self.evaluate_batch(w[None, :])
        return ObjectivePoint(float(s[0]), float(d[0]), self.cfg.kind)

    def single_metric_points(self) -> list[ObjectivePoint]:
        return [self.evaluate(np.eye(self.n_metrics)[m]) for m in range(self.n_metrics)]
