import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from proxyforge.scoring import (ContingencyLabel, classify, labels_from_tests, neutral_ns_breakdown, proxy_labels,
                                score, score_weights)
from proxyforge.simulator import preset, simulate_panel
from proxyforge.stats import MetricSummary

TAU = 1.98


def summary(t, mean):
    return MetricSummary(mean, abs(mean / t) if t else 1.0, t, 99, abs(t) > TAU, int(np.sign(mean)) if abs(t) > TAU else 0,
                         False)


def labels(counts):
    out = []
    for (p, n), c in counts.items():
        out += [ContingencyLabel(p, n)] * c
    return out


def test_classify_examples():
    det = classify(summary(3.1, 1.0), summary(2.5, 0.5))
    assert (det.proxy_direction, det.northstar_direction) == (1, 1) and det.is_detection
    mis = classify(summary(3.1, 1.0), summary(-2.5, -0.5))
    assert (mis.proxy_direction, mis.northstar_direction) == (1, -1) and mis.is_mistake
    neu = classify(summary(0.5, 0.1), summary(2.5, 0.5))
    assert (neu.proxy_direction, neu.northstar_direction) == (0, 1)
    assert not neu.is_detection and not neu.is_mistake


def test_published_row_shape():
    rep = score(labels({(1, 1): 40, (-1, -1): 32, (0, 1): 28, (0, 0): 50, (1, 0): 5}))
    assert rep.detections == 72 and rep.mistakes == 0 and rep.ns_significant == 100
    assert rep.proxy_score == 0.72 and rep.recall == 0.72 and rep.precision == 1.0


def test_mistakes_subtract():
    rep = score(labels({(1, 1): 38, (1, -1): 2, (0, 1): 60}))
    assert rep.proxy_score == pytest.approx(0.36)
    assert rep.recall == pytest.approx(0.38)
    assert rep.precision == pytest.approx(38 / 40)


def test_no_significant_north_star():
    rep = score([ContingencyLabel(0, 0)] * 5)
    assert rep.ns_significant == 0 and rep.proxy_score is None and rep.recall is None
    assert rep.counts[(0, 0)] == 5
    with pytest.raises(ValueError):
        score([])


label_st = st.builds(ContingencyLabel, st.sampled_from([-1, 0, 1]), st.sampled_from([-1, 0, 1]))


@settings(max_examples=200, deadline=None)
@given(st.lists(label_st, min_size=1, max_size=80), st.randoms())
def test_score_bounds_identity_and_permutation(labs, rnd):
    rep = score(labs)
    if rep.ns_significant:
        assert -1 <= rep.proxy_score <= 1
        assert rep.proxy_score == pytest.approx(rep.recall - rep.mistakes / rep.ns_significant)
    shuffled = list(labs)
    rnd.shuffle(shuffled)
    assert score(shuffled) == rep
    assert sum(rep.counts.values()) == len(labs)


def test_labels_from_tests_treats_nan_as_neutral():
    labs = labels_from_tests([1.0, -1.0, 1.0], [3.0, -3.0, np.nan], [1.0, 1.0, 1.0], [3.0, 3.0, 3.0], TAU)
    assert [(lab.proxy_direction, lab.northstar_direction) for lab in labs] == [(1, 1), (-1, 1), (0, 1)]


def test_neutral_breakdown_examples():
    labs = [ContingencyLabel(1, 0), ContingencyLabel(1, 0), ContingencyLabel(0, 1)]
    out = neutral_ns_breakdown(labs, [0.1, 0.3, 5.0])
    assert out[1] == pytest.approx(0.2) and out[0] is None and out[-1] is None
    assert neutral_ns_breakdown([ContingencyLabel(1, 1)], [1.0]) == {-1: None, 0: None, 1: None}


def test_neutral_breakdown_follows_generative_correlation():
    cfg = preset("short_long_divergence", J=800, N=100, M=4, seed=5)
    panel, _ = simulate_panel(cfg)
    labs, y = proxy_labels(panel, [0, 1, 1, 1])
    out = neutral_ns_breakdown(labs, y)
    assert out[1] > out[-1]


def test_score_weights_single_metric_matches_manual():
    cfg = preset("insensitive_ns", J=200, N=100, M=4, seed=2)
    panel, _ = simulate_panel(cfg)
    rep = score_weights(panel, [1, 0, 0, 0])
    labs, _ = proxy_labels(panel, [1, 0, 0, 0])
    assert rep == score(labs)
