import random

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from fedorch.model import Neighborhood, Orientation, PerformanceProfile
from fedorch.pdlc import (
    PROFILES, Bid, Forecast, LinearTrendForecaster, forecast, mask_actions, normalize,
    pad_observation, recommend, run_auction, score,
)

from oracles import argmax_auction, minmax_scores

LOWER, HIGHER = Orientation.LOWER_IS_BETTER, Orientation.HIGHER_IS_BETTER


def test_normalize_endpoints_and_constant():
    got = normalize({"a": {"lat": 10}, "b": {"lat": 20}}, {"lat": LOWER})
    assert got.values == {"a": {"lat": 1.0}, "b": {"lat": 0.0}}
    got = normalize({"a": {"lat": 10}, "b": {"lat": 20}}, {"lat": "higher_is_better"})
    assert got.values == {"a": {"lat": 0.0}, "b": {"lat": 1.0}}
    got = normalize({"a": {"x": 3}, "b": {"x": 3}}, {"x": HIGHER})
    assert got.values == {"a": {"x": 1.0}, "b": {"x": 1.0}}


def test_normalize_excludes_subjects_missing_metrics():
    got = normalize({"a": {"x": 1, "y": 2}, "b": {"x": 5}}, {"x": LOWER, "y": LOWER})
    assert got.subjects == ["a"]
    assert got.excluded == {"b": ["y"]}
    with pytest.raises(ValueError):
        normalize({}, {"x": LOWER})


@settings(max_examples=100)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=10),
       st.floats(1e-3, 1e3), st.floats(-1e6, 1e6))
def test_normalize_is_affine_invariant(xs, a, b):
    raw = {f"s{i}": {"m": x} for i, x in enumerate(xs)}
    moved = {s: {"m": a * v["m"] + b} for s, v in raw.items()}
    # a spread the float format cannot represent after the transform is not a counterexample
    for table in (raw, moved):
        col = [v["m"] for v in table.values()]
        spread, scale = max(col) - min(col), max(1.0, max(abs(x) for x in col))
        assume(spread == 0.0 or spread > 1e-6 * scale)
    base = normalize(raw, {"m": LOWER}).values
    got = normalize(moved, {"m": LOWER}).values
    for s in raw:
        assert got[s]["m"] == pytest.approx(base[s]["m"], abs=1e-6)


def test_score_examples():
    one = PerformanceProfile("p", {"x": 1.0}, {"x": LOWER})
    norm = normalize({"a": {"x": 1}, "b": {"x": 3}, "c": {"x": 2}}, {"x": LOWER})
    assert score(one, norm) == {"a": 1.0, "b": 0.0, "c": 0.5}
    two = PerformanceProfile("p", {"x": 0.5, "y": 0.5}, {"x": HIGHER, "y": HIGHER})
    norm = normalize({"a": {"x": 1, "y": 0}, "b": {"x": 0, "y": 1}}, two.orientation)
    assert score(two, norm) == {"a": 0.5, "b": 0.5}
    with pytest.raises(KeyError):
        score(two, normalize({"a": {"x": 1}}, {"x": HIGHER}))


def test_greenness_over_four_nodes_matches_hand_means():
    raw = {"n1": {"node_energy": 10.0, "network_energy": 0.2},
           "n2": {"node_energy": 4.0, "network_energy": 0.8},
           "n3": {"node_energy": 6.0, "network_energy": 0.2},
           "n4": {"node_energy": 12.0, "network_energy": 0.5}}
    g = PROFILES["greenness"]
    got = score(g, normalize(raw, g.orientation))
    # node_energy scaled over [4, 12], network over [0.2, 0.8], lower better
    hand = {"n1": 0.6 * 0.25 + 0.4 * 1.0, "n2": 0.6 * 1.0 + 0.4 * 0.0,
            "n3": 0.6 * 0.75 + 0.4 * 1.0, "n4": 0.6 * 0.0 + 0.4 * 0.5}
    oracle = minmax_scores(raw, g.weights, {"node_energy", "network_energy"})
    for n in raw:
        assert got[n] == pytest.approx(hand[n], abs=1e-12)
        assert got[n] == pytest.approx(oracle[n], abs=1e-12)


def test_forecast_examples():
    const = [(60.0 * i, 7.0) for i in range(6)]
    for h in (5, 15, 30):
        assert forecast(const, h).value == pytest.approx(7.0)
    line = [(60.0 * i, float(i)) for i in range(10)]  # slope one per minute
    assert forecast(line, 5).value == pytest.approx(9.0 + 5.0)
    assert forecast([(0.0, 3.0)], 5) == Forecast(3.0, cold=True)
    assert forecast([(5.0, 1.0), (5.0, 2.0)], 5).cold
    with pytest.raises(ValueError):
        forecast(line, 7)
    with pytest.raises(ValueError):
        forecast([], 5)


@settings(max_examples=60)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=20), st.sampled_from((5, 15, 30)))
def test_forecast_matches_polyfit(ys, horizon):
    series = [(10.0 * i, y) for i, y in enumerate(ys)]
    tail = series[-12:]
    t = np.array([p[0] for p in tail])
    slope, icept = np.polyfit(t, np.array([p[1] for p in tail]), 1)
    expected = slope * (t[-1] + horizon * 60.0) + icept
    assert forecast(series, horizon).value == pytest.approx(expected, rel=1e-6, abs=1e-6)


def test_forecast_clamps():
    f = LinearTrendForecaster(lower=0.0, upper=1.0)
    assert f.predict([(0.0, 0.5), (60.0, 0.9)], 30).value == 1.0


def test_pad_observation():
    obs, mask = pad_observation(list(range(20)))
    assert obs.tolist() == list(range(20)) and mask.all()
    obs, mask = pad_observation([1.0, 2.0, 3.0])
    assert obs.tolist() == [1.0, 2.0, 3.0] + [0.0] * 17
    assert mask.sum() == 3
    with pytest.raises(ValueError):
        pad_observation([0.0] * 21)


def test_mask_actions():
    cands = [("A", "a1"), ("A", "a2"), ("B", "b1")]
    assert mask_actions(cands, lambda c: True) == cands
    free = {"a1": 0, "a2": 500, "b1": 100}
    assert mask_actions(cands, lambda c: free[c[1]] > 0) == [("A", "a2"), ("B", "b1")]
    rng = random.Random(2)
    for _ in range(20):
        pool = [(f"c{i}", f"n{j}") for i in range(3) for j in range(rng.randint(0, 4))]
        ok = {c: rng.random() < 0.5 for c in pool}
        assert mask_actions(pool, ok.get) == [c for c in pool if ok[c]]


def test_auction_examples():
    assert run_auction("w", [Bid("A", "w", 0.9), Bid("B", "w", 0.4)]).winner == "A"
    tie = run_auction("w", [Bid("B", "w", 0.7), Bid("A", "w", 0.7)])
    assert tie.winner == "A" and tie.recommendation.stability == 1.0
    assert run_auction("w", [Bid("A", "w", 0.0, masked=True)]) is None
    assert run_auction("w", [Bid("A", "w", 0.3)]).recommendation.stability == 1.0
    with pytest.raises(ValueError):
        Bid("A", "w", 1.2)
    with pytest.raises(ValueError):
        Bid("A", "w", 0.2, masked=True)


@given(st.lists(st.floats(0, 1), min_size=5, max_size=5))
def test_auction_matches_argmax(values):
    bids = {f"c{i}": v for i, v in enumerate(values)}
    got = run_auction("w", [Bid(c, "w", v) for c, v in bids.items()])
    winner, stability = argmax_auction(bids)
    assert got.winner == winner
    assert got.recommendation.stability == pytest.approx(stability, abs=1e-12)
    assert got.ranking[0] == winner


def test_recommend_degenerate_single_node():
    nh = Neighborhood("g/nh0", "g", frozenset({"A"}), 1)
    g = PROFILES["greenness"]
    recs, bids = recommend(nh, g, {"A": {"a1": {"node_energy": 3.0, "network_energy": 1.0}}})
    assert [(r.scope, r.target_id, r.score) for r in recs] == \
        [("node", "a1", 1.0), ("cluster", "A", 1.0)]
    assert bids == [Bid("A", "g", 1.0)]


def three_cluster_metrics(rng):
    return {c: {f"{c.lower()}{j}": {"node_energy": rng.uniform(1, 10),
                                     "network_energy": rng.uniform(0, 2)}
                for j in range(rng.randint(1, 3))}
            for c in "ABC"}


def test_recommend_zero_forecast_weight_is_plain_score():
    rng = random.Random(4)
    g = PROFILES["greenness"]
    nh = Neighborhood("g/nh0", "g", frozenset("ABC"), 3)
    metrics = three_cluster_metrics(rng)
    flat = {n: v for c in metrics.values() for n, v in c.items()}
    fake = {n: {"node_energy": 100.0} for n in flat}
    recs, _ = recommend(nh, g, metrics, fake, forecast_weight=0.0)
    assert {r.target_id: r.score for r in recs if r.scope == "node"} == \
        score(g, normalize(flat, g.orientation))


def test_recommend_matches_pipeline_oracle():
    rng = random.Random(9)
    g = PROFILES["greenness"]
    nh = Neighborhood("g/nh0", "g", frozenset("ABC"), 3)
    for _ in range(20):
        metrics = three_cluster_metrics(rng)
        full = {n for c in metrics.values() for n in c if rng.random() < 0.3}
        recs, bids = recommend(nh, g, metrics, forecast_weight=0.0,
                               feasible=lambda cand: cand[1] not in full)
        flat = {n: v for c in metrics.values() for n, v in c.items()}
        node_scores = minmax_scores(flat, g.weights, {"node_energy", "network_energy"})
        best = {c: max((node_scores[n] for n in metrics[c] if n not in full), default=None)
                for c in "ABC"}
        live = {c: v for c, v in best.items() if v is not None}
        for r in recs:
            assert 0.0 <= r.score <= 1.0 and 0.0 <= r.stability <= 1.0
            if r.scope == "node":
                assert r.score == pytest.approx(node_scores[r.target_id], abs=1e-12)
            assert r.cluster_id in nh.members
        cluster_recs = {r.target_id: r for r in recs if r.scope == "cluster"}
        assert set(cluster_recs) == set(live)
        if live:
            winner, stability = argmax_auction(live)
            assert run_auction("g", bids).winner == winner
            for r in cluster_recs.values():
                assert r.stability == pytest.approx(stability, abs=1e-12)
