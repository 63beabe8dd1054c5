"""Seeded synthetic experiment panels with known true effects.

For experiment j a vector of true effects (one per auxiliary metric plus the
long-term north star) is drawn from a multivariate normal; each bucket then
adds independent Gaussian noise per metric. Experiment j uses its own random
substream, so generation can run in parallel without changing the output.

Preset constants
----------------
Both presets use a one-factor effect model: the long-term north-star effect is
``theta_Y ~ N(mu_Y, s^2)`` and every other metric's effect is
``loading * theta_Y + idiosyncratic``. The numbers live in ``INS`` and in
:func:`preset`; they are artifact-defined, chosen so the presets show the
intended behavior at J=300, N=100.

``insensitive_ns`` (mu_Y = 0.1, s = 0.5, north-star bucket sd 0.25):

=============  =======  ====================  ============
column         loading  idiosyncratic sd      bucket sd
=============  =======  ====================  ============
ns_short       1.0      0.02                  6.0
aux_01         1.0      1.25                  0.1
aux_02         1.0      1.25 (corr -0.9998    0.1
                        with aux_01)
aux_03..       1.0      sqrt(V_k - se_k^2)    10 * se_k
=============  =======  ====================  ============

with V_k evenly spaced on [0.875, 1.625] and se_k evenly spaced on [0.5, 0.1]
over the filler metrics. The short-term north star is the least sensitive
and the most correlated column. aux_01 and aux_02 are sensitive but poorly
correlated on their own, while their average tracks theta_Y closely. aux_03
is recorded with sign -1 (lower is better) to exercise the registry sign flip.

``short_long_divergence`` (mu_Y = 0.1, s = 0.2, north-star bucket sd 0.3): ns_short has
loading -0.6, mean -0.05, idiosyncratic sd 0.05, bucket sd 1.0; auxiliaries
have loading 1, idiosyncratic sd evenly spaced on [0.1, 0.3] and bucket sd on
[0.5, 0.2].
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import (AUXILIARY, NORTH_STAR_LONG, NORTH_STAR_SHORT, ExperimentPanel, MetricEntry,
                   MetricRegistry, atomic_write)
from .rng import substream

PSD_TOL = 1e-8
PRESETS = ("insensitive_ns", "short_long_divergence")
INS = {
    "effect_sd": 0.5,
    "mu_y": 0.1,
    "ns_long_noise": 0.25,
    "ns_short_idio": 0.02,
    "ns_short_noise": 6.0,
    "pair_idio": 1.25,
    "pair_corr": -0.9998,
    "pair_noise": 0.1,
    "filler_extra_var": (0.875, 1.625),
    "filler_se": (0.5, 0.1),
}


class InvalidCovariance(ValueError):
    pass


class UnknownPreset(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SimConfig:
    J: int
    N: int
    M: int
    effect_mean: np.ndarray
    effect_cov: np.ndarray
    bucket_noise_sd: np.ndarray
    scenario: str = "custom"
    seed: int = 0
    registry: MetricRegistry | None = field(default=None)

    def __post_init__(self):
        k = self.M + 1
        mean = np.asarray(self.effect_mean, dtype=float)
        cov = np.asarray(self.effect_cov, dtype=float)
        sd = np.asarray(self.bucket_noise_sd, dtype=float)
        if self.J < 3 or self.N < 3 or self.M < 1:
            raise ValueError("need J >= 3, N >= 3 and M >= 1")
        if mean.shape != (k,) or sd.shape != (k,) or cov.shape != (k, k):
            raise ValueError(f"effect_mean, bucket_noise_sd and effect_cov must have size M+1 = {k}")
        if np.any(sd < 0):
            raise ValueError("bucket noise sds must be nonnegative")
        if not np.allclose(cov, cov.T, atol=PSD_TOL):
            raise InvalidCovariance("effect_cov is not symmetric")
        object.__setattr__(self, "effect_mean", mean)
        object.__setattr__(self, "effect_cov", cov)
        object.__setattr__(self, "bucket_noise_sd", sd)
        if self.registry is None:
            object.__setattr__(self, "registry", default_registry(self.M))
        elif len(self.registry.auxiliary) != self.M:
            raise ValueError("registry does not list M auxiliary metrics")

    def with_seed(self, seed: int) -> SimConfig:
        return SimConfig(self.J, self.N, self.M, self.effect_mean, self.effect_cov, self.bucket_noise_sd,
                         self.scenario, seed, self.registry)

    def to_dict(self) -> dict:
        return {"J": self.J, "N": self.N, "M": self.M, "scenario": self.scenario, "seed": self.seed,
                "effect_mean": self.effect_mean.tolist(), "effect_cov": self.effect_cov.tolist(),
                "bucket_noise_sd": self.bucket_noise_sd.tolist(),
                "metric_ids": [e.metric_id for e in self.registry.entries]}


@dataclass(frozen=True, eq=False)
class GroundTruth:
    experiments: tuple[str, ...]
    metric_ids: tuple[str, ...]
    true_effects: np.ndarray  # (J, M+1), last column is the long-term north star


def default_registry(m: int, negative: tuple[int, ...] = ()) -> MetricRegistry:
    entries = [MetricEntry("ns_short", NORTH_STAR_SHORT, -1 if 0 in negative else 1, "north star (short term)")]
    for i in range(1, m):
        entries.append(MetricEntry(f"aux_{i:02d}", AUXILIARY, -1 if i in negative else 1, f"auxiliary {i}"))
    entries.append(MetricEntry("ns_long", NORTH_STAR_LONG, 1, "north star (long term)"))
    return MetricRegistry(tuple(entries))


def mvn_factor(cov: np.ndarray) -> np.ndarray:
    """A matrix F with F @ F.T == cov.

    Cholesky (lower triangular) when cov is positive definite. A PSD-but-singular
    matrix falls back to ``Q diag(sqrt(max(lambda, 0)))`` from its symmetric
    eigendecomposition. Eigenvalues below ``-1e-8 * max(1, |lambda|_max)`` are
    rejected.
    """
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    lam, q = np.linalg.eigh(cov)
    if lam.min() < -PSD_TOL * max(1.0, np.abs(lam).max()):
        raise InvalidCovariance(f"effect_cov is not positive semidefinite (min eigenvalue {lam.min():.3g})")
    return q * np.sqrt(np.clip(lam, 0.0, None))


def simulate_panel(cfg: SimConfig, threads: int = 1) -> tuple[ExperimentPanel, GroundTruth]:
    factor = mvn_factor(cfg.effect_cov)
    k = cfg.M + 1

    def draw(j):
        rng = substream(cfg.seed, "simulate", j)
        theta = cfg.effect_mean + factor @ rng.standard_normal(k)
        buckets = theta + rng.standard_normal((cfg.N, k)) * cfg.bucket_noise_sd
        return theta, buckets

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            draws = list(pool.map(draw, range(cfg.J)))
    else:
        draws = [draw(j) for j in range(cfg.J)]
    theta = np.array([d[0] for d in draws])
    data = np.stack([d[1] for d in draws], axis=1)  # (N, J, M+1)
    width = max(4, len(str(cfg.J - 1)))
    exps = tuple(f"e{j:0{width}d}" for j in range(cfg.J))
    panel = ExperimentPanel(exps, data[:, :, :cfg.M], data[:, :, cfg.M], cfg.registry)
    ids = tuple(e.metric_id for e in cfg.registry.auxiliary) + (cfg.registry.north_star_long.metric_id,)
    return panel, GroundTruth(exps, ids, theta)


def _factor_cov(loadings, idio_cov, effect_sd: float) -> np.ndarray:
    L = np.asarray(loadings, dtype=float)
    return effect_sd ** 2 * np.outer(L, L) + idio_cov


def preset(name: str, J: int = 300, N: int = 100, M: int = 10, seed: int = 0) -> SimConfig:
    k = M + 1
    if name == "insensitive_ns":
        effect_sd = INS["effect_sd"]
        loadings = np.ones(k)
        idio = np.zeros((k, k))
        noise = np.zeros(k)
        idio[0, 0], noise[0] = INS["ns_short_idio"] ** 2, INS["ns_short_noise"]
        for i in (1, 2):
            if i < M:
                idio[i, i], noise[i] = INS["pair_idio"] ** 2, INS["pair_noise"]
        if M > 2:
            idio[1, 2] = idio[2, 1] = INS["pair_corr"] * INS["pair_idio"] ** 2
        fillers = list(range(3, M))
        if fillers:
            v = np.linspace(*INS["filler_extra_var"], len(fillers))
            se = np.linspace(*INS["filler_se"], len(fillers))
            for i, vk, sek in zip(fillers, v, se):
                idio[i, i] = vk - sek ** 2
                noise[i] = sek * 10.0
        noise[M] = INS["ns_long_noise"]
        mean = INS["mu_y"] * loadings
        registry = default_registry(M, negative=(3,) if M > 3 else ())
    elif name == "short_long_divergence":
        effect_sd = 0.2
        mu_y = 0.1
        loadings = np.ones(k)
        loadings[0] = -0.6
        idio = np.zeros((k, k))
        noise = np.zeros(k)
        idio[0, 0], noise[0] = 0.05 ** 2, 1.0
        aux = list(range(1, M))
        if aux:
            for i, c, s in zip(aux, np.linspace(0.1, 0.3, len(aux)), np.linspace(0.5, 0.2, len(aux))):
                idio[i, i], noise[i] = c ** 2, s
        noise[M] = 0.3
        mean = mu_y * loadings
        mean[0] = -0.05
        registry = default_registry(M)
    else:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {PRESETS}")
    cov = _factor_cov(loadings, idio, effect_sd)
    return SimConfig(J, N, M, mean, cov, noise, name, seed, registry)


def write_truth(truth: GroundTruth, registry: MetricRegistry, path: str | os.PathLike) -> None:
    """Truth CSV in the same orientation (registry signs undone) as the data file."""
    signs = [e.sign for e in registry.auxiliary] + [registry.north_star_long.sign]
    with atomic_write(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["experiment_id", "metric_id", "true_pct_delta"])
        for j, exp in enumerate(truth.experiments):
            for m, metric in enumerate(truth.metric_ids):
                writer.writerow([exp, metric, repr(float(signs[m] * truth.true_effects[j, m]))])
