import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from proxyforge.pareto import (BinSpec, KindMismatch, ParetoArchive, ParetoResult, PointBelowReference,
                               SearchBudget, binned_search, default_bins, dominates, evaluation_log,
                               hypervolume_2d, nondominated, random_search)
from proxyforge.proxy import BS_CORR, ObjectiveConfig, ObjectivePoint, ProxyEvaluator, evaluate_objectives
from proxyforge.direct import direct_l_maximize

from conftest import random_panel

KIND = BS_CORR.kind


def pt(x, y, kind=KIND):
    return ObjectivePoint(x, y, kind)


def archive_of(points):
    a = ParetoArchive(KIND)
    for i, (x, y) in enumerate(points):
        a.insert(np.array([float(i)]), pt(x, y))
    return a


def test_dominance_examples():
    assert dominates((0.5, 0.5), (0.4, 0.4))
    assert not dominates((0.6, 0.3), (0.3, 0.6)) and not dominates((0.3, 0.6), (0.6, 0.3))
    assert not dominates((0.5, 0.5), (0.5, 0.5))
    assert dominates((0.5, 0.5), (0.5, 0.4))
    with pytest.raises(KindMismatch):
        dominates(pt(1, 1), pt(0, 0, ("average", "neg_mse")))


def test_archive_insert_examples():
    a = archive_of([(0.4, 0.6), (0.6, 0.4)])
    assert a.insert([0.0], pt(0.5, 0.5))
    assert len(a) == 3
    assert not a.insert([0.0], pt(0.3, 0.3))
    assert len(a) == 3
    a.insert([0.0], pt(0.7, 0.7))
    assert [p.as_tuple() for p in a.points] == [(0.7, 0.7)]
    with pytest.raises(KindMismatch):
        a.insert([0.0], pt(1, 1, ("average", "neg_mse")))


def test_duplicates_keep_first_copy():
    a = ParetoArchive(KIND)
    assert a.insert([1.0], pt(0.5, 0.5))
    assert not a.insert([2.0], pt(0.5, 0.5))
    assert a.entries[0].weights.tolist() == [1.0]


coords = st.floats(0, 1, allow_nan=False)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]) | coords,
                          st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]) | coords), min_size=1, max_size=60))
def test_archive_equals_brute_force(points):
    a = archive_of(points)
    expected = sorted(points[i] for i in nondominated(points))
    got = [p.as_tuple() for p in a.points]
    assert got == expected
    # staircase: ascending sensitivity, strictly descending directionality
    assert all(x1 < x2 and y1 > y2 for (x1, y1), (x2, y2) in zip(got, got[1:]))
    # first copy of a duplicate survives
    for e in a.entries:
        assert points.index(e.point.as_tuple()) == int(e.weights[0])


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(coords, coords), min_size=1, max_size=30), st.tuples(coords, coords))
def test_insert_never_shrinks_hypervolume(points, new):
    a = archive_of(points)
    before = hypervolume_2d(a.points)
    a.insert([0.0], pt(*new))
    assert hypervolume_2d(a.points) >= before - 1e-15


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(coords, coords), min_size=1, max_size=40), st.integers(1, 39))
def test_merge_matches_single_archive(points, cut):
    left, right = archive_of(points[:cut]), archive_of(points[cut:])
    right.merge(left)
    assert sorted(p.as_tuple() for p in right.points) == sorted(p.as_tuple() for p in archive_of(points).points)


def test_eviction_keeps_extremes_and_drops_smallest_area():
    a = ParetoArchive(KIND, capacity=3)
    for x, y in [(0.1, 0.9), (0.5, 0.5), (0.52, 0.48), (0.9, 0.1)]:
        a.insert([0.0], pt(x, y))
    got = [p.as_tuple() for p in a.points]
    assert len(got) == 3 and got[0] == (0.1, 0.9) and got[-1] == (0.9, 0.1)
    assert (0.52, 0.48) not in got  # its exclusive area 0.02*0.38 is the smaller one


def test_hypervolume_examples():
    assert hypervolume_2d([(0.2, 0.9), (0.5, 0.6), (0.8, 0.2)]) == pytest.approx(0.42, abs=1e-12)
    assert hypervolume_2d([(0.3, 0.7)]) == pytest.approx(0.21)
    assert hypervolume_2d([(0.5, 0.5), (0.4, 0.4)]) == pytest.approx(0.25)
    assert hypervolume_2d([]) == 0.0
    with pytest.raises(PointBelowReference):
        hypervolume_2d([(0.5, -0.1)])
    assert hypervolume_2d([(0.5, -0.1), (0.5, 0.5)], strict=False) == pytest.approx(0.25)


def test_hypervolume_against_grid_count(rng):
    for _ in range(10):
        pts = rng.uniform(size=(50, 2))
        g = (np.arange(400) + 0.5) / 400
        gx, gy = np.meshgrid(g, g)
        covered = np.zeros_like(gx, dtype=bool)
        for x, y in pts:
            covered |= (gx <= x) & (gy <= y)
        assert hypervolume_2d(pts) == pytest.approx(covered.mean(), abs=5e-3)


def test_bins():
    bins = BinSpec.uniform(0.9, 4)
    assert bins.count == 4
    assert bins.interval(0) == (0.0, 0.3, False)
    assert bins.interval(2)[2]
    assert bins.contains(0, [0.0, 0.3]).tolist() == [True, False]
    assert bins.contains(2, [0.9]).tolist() == [True]
    with pytest.raises(ValueError):
        BinSpec((0.1, 0.5))
    with pytest.raises(ValueError):
        BinSpec((0.0, 0.5, 0.5))
    with pytest.raises(ValueError):
        SearchBudget(0)


@pytest.fixture
def panel(rng):
    return random_panel(rng, n=20, j=60, m=3, effect=0.3, noise=1.0, y_coef=[1.0, 0.2, 0.0])


def test_random_search_single_metric(rng):
    one = random_panel(rng, m=1)
    res = random_search(one, budget=SearchBudget(50, 1))
    assert len(res.entries) == 1
    assert res.points[0].as_tuple() == pytest.approx(evaluate_objectives(one, [1.0]).as_tuple(), abs=1e-12)


def test_random_search_matches_log_filter(panel):
    budget = SearchBudget(200, 5)
    W, pts = evaluation_log(panel, BS_CORR, budget)
    res = random_search(panel, BS_CORR, budget)
    keep = nondominated(pts)
    assert [p.as_tuple() for p in res.points] == sorted(pts[i].as_tuple() for i in keep)
    for e in res.entries:
        assert e.weights.sum() == pytest.approx(1.0)
        again = evaluate_objectives(panel, e.weights)
        assert again.as_tuple() == pytest.approx(e.point.as_tuple(), abs=1e-10)


def test_random_search_deterministic_across_threads(panel):
    budget = SearchBudget(3000, 9)
    a = random_search(panel, BS_CORR, budget, threads=1).to_dict()
    b = random_search(panel, BS_CORR, budget, threads=4).to_dict()
    a.pop("wall_time_ms"), b.pop("wall_time_ms")
    assert a == b


def test_result_round_trip(panel):
    res = random_search(panel, ObjectiveConfig.from_name("as-negmse"), SearchBudget(100, 2))
    again = ParetoResult.from_dict(res.to_dict())
    assert again.to_dict() == res.to_dict()


def test_binned_search_feasibility_and_determinism(panel):
    ev = ProxyEvaluator(panel)
    bins = default_bins(ev, 6)
    a = binned_search(panel, BS_CORR, bins, 300)
    assert len(a.entries) <= bins.count - 1
    for row in a.bins:
        if row["feasible"]:
            assert bins.contains(row["bin"], row["sensitivity"])
            again = evaluate_objectives(panel, row["weights"])
            assert again.sensitivity == pytest.approx(row["sensitivity"], abs=1e-10)
            assert again.directionality == pytest.approx(row["directionality"], abs=1e-10)
        assert row["evaluations"] <= 300
    b = binned_search(panel, BS_CORR, bins, 300, threads=3)
    a_d, b_d = a.to_dict(), b.to_dict()
    a_d.pop("wall_time_ms"), b_d.pop("wall_time_ms")
    assert a_d == b_d


def test_bin_above_reach_is_infeasible(rng):
    noise_only = random_panel(rng, n=20, j=60, m=3, effect=0.0)
    res = binned_search(noise_only, BS_CORR, BinSpec((0.0, 0.5, 0.9, 1.0)), 200)
    assert 2 in res.infeasible_bins
    assert not res.bins[2]["feasible"] and "weights" not in res.bins[2]
    assert all(e.point.sensitivity < 0.9 for e in res.entries)


def test_single_bin_is_unconstrained_directionality(panel):
    res = binned_search(panel, BS_CORR, BinSpec((0.0, 1.0)), 500)
    ev = ProxyEvaluator(panel)
    _, best = direct_l_maximize(lambda P: ev.evaluate_batch(P)[1], 3, 500, batched=True)
    assert res.points[0].directionality == pytest.approx(best, abs=1e-12)
