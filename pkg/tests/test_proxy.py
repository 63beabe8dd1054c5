import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from proxyforge.data import ExperimentPanel
from proxyforge.proxy import (AllZeroWeights, DimensionMismatch, ObjectiveConfig, ProxyEvaluator, as_weights,
                              evaluate_objectives, evaluate_proxy, normalize, proxy_series)
from proxyforge.stats import binary_sensitivity, directionality_corr, summarize

from conftest import make_registry, random_panel

AS_NEGMSE = ObjectiveConfig.from_name("as-negmse")


def test_normalize_examples():
    assert normalize([2, 2]).tolist() == [0.5, 0.5]
    assert normalize([0, 3, 1]).tolist() == [0, 0.75, 0.25]
    with pytest.raises(AllZeroWeights):
        normalize([0, 0])
    with pytest.raises(AllZeroWeights):
        as_weights([0.0, 0.0])
    with pytest.raises(ValueError):
        as_weights([1.0, -0.1])
    with pytest.raises(DimensionMismatch):
        as_weights([1.0], 2)


def test_proxy_series(rng):
    panel = random_panel(rng, m=2)
    assert np.array_equal(proxy_series(panel, [0, 1]), panel.X[..., 1])
    assert np.array_equal(proxy_series(panel, [2, 4]), 2 * proxy_series(panel, [1, 2]))
    reg = make_registry(("a", "b"))
    tiny = ExperimentPanel(("e",), np.array([[[2.0, 4.0]]] * 3), np.zeros((3, 1)), reg)
    assert proxy_series(tiny, [0.5, 0.5])[0, 0] == 3.0


def test_one_hot_reduces_to_single_metric(rng):
    panel = random_panel(rng, m=3)
    table = summarize(panel)
    ybar = panel.Y.mean(axis=0)
    for k in range(3):
        w = np.eye(3)[k]
        p = evaluate_objectives(panel, w)
        assert p.sensitivity == binary_sensitivity(table.t[:, k], table.tau)
        assert p.directionality == pytest.approx(directionality_corr(table.mean[:, k], ybar), abs=1e-12)


def test_self_correlation(rng):
    panel = random_panel(rng, m=2)
    same = ExperimentPanel(panel.experiments, panel.X, panel.X[..., 0], panel.registry)
    assert evaluate_objectives(same, [1, 0]).directionality == pytest.approx(1.0)


def test_proxy_means_are_linear(rng):
    panel = random_panel(rng, m=4)
    w = rng.uniform(size=4)
    two_ways = panel.X.mean(axis=0) @ w
    assert np.allclose(evaluate_proxy(panel, w).mean, two_ways, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("cfg", [ObjectiveConfig(), AS_NEGMSE, ObjectiveConfig("average", "spearman", clamp=1.5)])
def test_batched_matches_reference(rng, cfg):
    panel = random_panel(rng, n=15, j=40, m=4)
    ev = ProxyEvaluator(panel, cfg)
    W = rng.uniform(size=(300, 4))
    sens, direc = ev.evaluate_batch(W)
    for w, s, d in zip(W[:60], sens, direc):
        ref = evaluate_objectives(panel, w, cfg)
        assert s == pytest.approx(ref.sensitivity, abs=1e-10)
        assert d == pytest.approx(ref.directionality, abs=1e-10)


def test_batched_t_matches_reference(rng):
    panel = random_panel(rng, n=12, j=25, m=3)
    ev = ProxyEvaluator(panel)
    W = rng.uniform(size=(5, 3))
    zbar, t = ev.moments(W)
    for w, zb, tt in zip(W, zbar, t):
        ref = evaluate_proxy(panel, w)
        assert np.allclose(zb, ref.mean, rtol=1e-12)
        assert np.allclose(tt, ref.t, rtol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
def test_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    panel = random_panel(rng, n=8, j=20, m=3)
    w = rng.uniform(0.01, 1, size=3)
    a, b = evaluate_objectives(panel, w), evaluate_objectives(panel, c * w)
    assert abs(a.sensitivity - b.sensitivity) <= 1e-10
    assert abs(a.directionality - b.directionality) <= 1e-10


def test_mse_runs_on_normalized_weights(rng):
    panel = random_panel(rng, m=3)
    w = np.array([1.0, 2.0, 3.0])
    assert evaluate_proxy(panel, 5 * w, AS_NEGMSE).weights.sum() == pytest.approx(1.0)
    assert evaluate_objectives(panel, 5 * w, AS_NEGMSE) == evaluate_objectives(panel, w, AS_NEGMSE)
    assert evaluate_objectives(panel, w, AS_NEGMSE).directionality <= 0


def test_config_names():
    assert ObjectiveConfig.from_name("bs-corr").kind == ("binary", "pearson")
    assert AS_NEGMSE.kind == ("average", "neg_mse")
    with pytest.raises(ValueError):
        ObjectiveConfig.from_name("nope")


def test_single_metric_points(rng):
    panel = random_panel(rng, m=3)
    pts = ProxyEvaluator(panel).single_metric_points()
    for k, p in enumerate(pts):
        assert p.as_tuple() == pytest.approx(evaluate_objectives(panel, np.eye(3)[k]).as_tuple(), abs=1e-12)
