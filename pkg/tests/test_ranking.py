from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from hwrec.domain import BenchmarkRecord, MetricKind, Phase, RankingTable, WeightConfig, utc_now
from hwrec.metrics import weight_config
from hwrec.ranking import (
    RankingError,
    aggregate_records,
    copeland,
    format_table,
    kendall_tau,
    objective_score,
    pairwise_tally,
    rank_by_copeland,
    rank_by_metric,
    rank_by_objective,
    ranking_from_csv,
    ranking_to_csv,
    weighted_copeland,
)

from oracles import copeland_oracle, tau_b_oracle

LAT, ACC, MEM, POW = MetricKind.EXECUTION_TIME_MS, MetricKind.ACCURACY, MetricKind.MEMORY_MB, MetricKind.POWER_W


def rec(model, lat=90.0, acc=0.9, phase=Phase.FIXED_BATCH, task="t", hw="h"):
    metrics = {
        LAT: lat, MEM: 100.0, POW: 5.0, MetricKind.CPU_TEMP_C: 40.0, MetricKind.CARBON_FOOTPRINT: 5.2, ACC: acc,
    }
    return BenchmarkRecord(model, task, hw, 32, phase, metrics, utc_now(), True)


def order_table(order, method="x"):
    return RankingTable.from_scores({c: float(len(order) - i) for i, c in enumerate(order)}, method)


# -- aggregation -----------------------------------------------------------

def test_aggregate_singleton_and_mean():
    agg = aggregate_records([rec("m1", lat=80), rec("m1", lat=100), rec("m2", lat=70)], ("t", "h"))
    assert agg["m1"][LAT] == 90.0
    assert agg["m2"][LAT] == 70.0


def test_aggregate_median():
    agg = aggregate_records([rec("m", lat=v) for v in (1, 2, 100)], ("t", "h"), "median")
    assert agg["m"][LAT] == 2


def test_aggregate_ignores_sweep_and_warns():
    agg = aggregate_records([rec("m1", phase=Phase.BATCH_SWEEP, lat=1), rec("m1", lat=5),
                             rec("m2", phase=Phase.BATCH_SWEEP)], ("t", "h"))
    assert agg["m1"][LAT] == 5
    assert "m2" not in agg.values
    assert any("m2" in w for w in agg.warnings)


def test_aggregate_mixed_scope_rejected():
    with pytest.raises(RankingError):
        aggregate_records([rec("m1"), rec("m2", hw="other")], ("t", "h"))


# -- per-metric ranking ----------------------------------------------------

def test_rank_by_metric_direction():
    assert rank_by_metric({"m1": {LAT: 90}, "m2": {LAT: 120}}, LAT).table.candidate_ids == ("m1", "m2")
    assert rank_by_metric({"m1": {ACC: 0.8}, "m2": {ACC: 0.9}}, ACC).table.candidate_ids == ("m2", "m1")


def test_rank_by_metric_tie_and_singleton():
    t = rank_by_metric({"m1": {ACC: 0.92}, "m2": {ACC: 0.92}}, ACC).table
    assert t.ties == ((0, 1),)
    assert rank_by_metric({"solo": {ACC: 0.5}}, ACC).table.ranks() == [1]


def test_rank_by_metric_missing_value_named():
    with pytest.raises(RankingError, match="m2.*accuracy"):
        rank_by_metric({"m1": {ACC: 0.9}, "m2": {LAT: 1}}, ACC)


# -- weighted Copeland -----------------------------------------------------

def test_single_voter_degeneracy():
    t = order_table(["b", "c", "a"])
    out = copeland([t], [1.0])
    assert out.candidate_ids == ("b", "c", "a")


def test_reversed_voters_all_tie():
    out = copeland([order_table("abc"), order_table("cba")], [0.5, 0.5])
    assert out.scores == (1.0, 1.0, 1.0)
    assert out.candidate_ids == ("a", "b", "c")
    assert out.ties == ((0, 1, 2),)


def test_weighted_majority_example():
    out = copeland([order_table("abc"), order_table("bac")], [0.6, 0.4])
    assert dict(zip(out.candidate_ids, out.scores)) == {"a": 2.0, "b": 1.0, "c": 0.0}


def test_tally_invariants():
    tally = pairwise_tally([order_table("abcd"), order_table("badc"), order_table("dcba")], [0.5, 0.3, 0.2])
    assert np.all(np.diag(tally.wins) == 0)
    assert np.all(tally.wins + tally.wins.T <= 1 + 1e-9)


def test_copeland_mismatch_errors():
    with pytest.raises(RankingError):
        copeland([order_table("ab"), order_table("ac")], [0.5, 0.5])
    cfg = weight_config({"accuracy": 1.0})
    with pytest.raises(RankingError):
        weighted_copeland([rank_by_metric({"a": {LAT: 1}, "b": {LAT: 2}}, LAT)], cfg)


instances = st.integers(1, 5).flatmap(lambda n: st.integers(1, 4).flatmap(lambda k: st.tuples(
    st.lists(st.lists(st.integers(0, 3), min_size=n, max_size=n), min_size=k, max_size=k),
    st.lists(st.integers(1, 10), min_size=k, max_size=k),
    st.lists(st.booleans(), min_size=k, max_size=k),
)))


@given(instances)
def test_copeland_matches_bruteforce(inst):
    raw_values, raw_w, lower = inst
    cands = [f"c{i}" for i in range(len(raw_values[0]))]
    values = [dict(zip(cands, map(float, vs))) for vs in raw_values]
    weights = [w / sum(raw_w) for w in raw_w]
    tables = [
        RankingTable.from_scores({c: (-v if low else v) for c, v in vals.items()}, "m")
        for vals, low in zip(values, lower)
    ]
    out = copeland(tables, weights)
    assert dict(zip(out.candidate_ids, out.scores)) == copeland_oracle(values, weights, lower)


@settings(max_examples=50)
@given(st.lists(st.floats(0.05, 1), min_size=2, max_size=4), st.randoms(use_true_random=False))
def test_weight_continuity(raw_w, rnd):
    weights = [w / sum(raw_w) for w in raw_w]
    cands = list("abcde")
    tables = []
    for _ in weights:
        rnd.shuffle(cands)
        tables.append(order_table(list(cands)))
    tally = pairwise_tally(tables, weights)
    margin = tally.wins - tally.wins.T
    off = ~np.eye(len(cands), dtype=bool)
    assume(np.all(np.abs(margin[off]) > 1e-9))
    bumped = [w + rnd.uniform(-1e-13, 1e-13) for w in weights]
    assert copeland(tables, weights).candidate_ids == copeland(tables, bumped).candidate_ids


def test_rank_by_copeland_one_hot():
    agg = {"m1": {LAT: 120, ACC: 0.9}, "m2": {LAT: 90, ACC: 0.8}, "m3": {LAT: 100, ACC: 0.95}}
    out = rank_by_copeland(agg, weight_config({"execution_time_ms": 1.0}))
    assert out.candidate_ids == ("m2", "m3", "m1")
    assert out.method == "copeland"


# -- objective --------------------------------------------------------------

def test_objective_worked_example():
    cfg = weight_config({"execution_time_ms": 1.0}, {"execution_time_ms": 100})
    assert objective_score(0.92, {LAT: 90}, cfg) == pytest.approx(1.0222222222222221, abs=1e-9)


def test_objective_zero_and_unit_ratios():
    cfg = weight_config({"execution_time_ms": 0.5, "power_w": 0.3, "memory_mb": 0.2},
                        {"execution_time_ms": 100, "power_w": 5, "memory_mb": 1024})
    assert objective_score(0.0, {LAT: 90, POW: 4, MEM: 10}, cfg) == 0.0
    assert objective_score(0.7, {LAT: 100, POW: 5, MEM: 1024}, cfg) == pytest.approx(0.7 * 3)
    prod = WeightConfig(cfg.weights, cfg.thresholds, "product")
    assert objective_score(0.7, {LAT: 100, POW: 5, MEM: 1024}, prod) == pytest.approx(0.7)


def test_objective_errors():
    cfg = weight_config({"execution_time_ms": 1.0})
    with pytest.raises(RankingError):
        objective_score(0.9, {LAT: 0.0}, cfg)
    with pytest.raises(RankingError):
        objective_score(0.9, {POW: 1.0}, cfg)


def test_objective_ranking_examples():
    cfg = weight_config({"execution_time_ms": 0.6, "accuracy": 0.4})
    out = rank_by_objective({"slow": (0.9, {LAT: 120}), "fast": (0.9, {LAT: 90})}, cfg)
    assert out.candidate_ids == ("fast", "slow") and out.method == "objective"
    assert rank_by_objective({"solo": (0.5, {LAT: 1})}, cfg).ranks() == [1]
    only_f = weight_config({"accuracy": 1.0})
    out = rank_by_objective({"a": (0.7, {LAT: 1}), "b": (0.9, {LAT: 500})}, only_f)
    assert out.candidate_ids == ("b", "a")


HW = [MetricKind.EXECUTION_TIME_MS, MetricKind.MEMORY_MB, MetricKind.POWER_W, MetricKind.CARBON_FOOTPRINT]
positive = st.floats(0.01, 1e4)


@given(st.lists(positive, min_size=4, max_size=4), st.lists(st.floats(0, 1), min_size=4, max_size=4),
       st.integers(0, 3), st.floats(0.01, 0.99), st.floats(0, 1), st.sampled_from(["sum", "product"]))
def test_objective_monotone(values, raw_w, which, factor, f, combiner):
    assume(sum(raw_w) > 0)
    weights = {k: w / sum(raw_w) for k, w in zip(HW, raw_w)}
    cfg = weight_config(weights, {k: 50.0 for k in HW}, combiner)
    base = dict(zip(HW, values))
    better = dict(base)
    better[HW[which]] *= factor  # lower is better for every hardware metric
    before, after = objective_score(f, base, cfg), objective_score(f, better, cfg)
    assert after >= before * (1 - 1e-12)
    if weights[HW[which]] > 1e-6 and f > 0.01:
        assert after > before


# -- Kendall tau -----------------------------------------------------------

def test_tau_examples():
    a = order_table("xyz")
    assert kendall_tau(a, a) == 1.0
    assert kendall_tau(a, order_table("zyx")) == -1.0
    assert kendall_tau(a, order_table("xzy")) == pytest.approx(1 / 3)
    with pytest.raises(RankingError):
        kendall_tau(a, order_table("xyw"))


def test_tau_with_ties_frozen():
    # levels a = [0,0,1,2], b = [0,1,1,2]: 4 concordant, 0 discordant, one tie each side
    a = RankingTable.from_scores({"p": 3, "q": 3, "r": 2, "s": 1}, "a")
    b = RankingTable.from_scores({"p": 3, "q": 2, "r": 2, "s": 1}, "b")
    assert kendall_tau(a, b) == pytest.approx(0.8, abs=1e-12)


def test_tau_undefined():
    assert math.isnan(kendall_tau(order_table("a"), order_table("a")))
    flat = RankingTable.from_scores({"a": 1, "b": 1, "c": 1}, "f")
    assert math.isnan(kendall_tau(flat, order_table("abc")))


@given(st.lists(st.integers(0, 4), min_size=2, max_size=8), st.data())
def test_tau_matches_bruteforce_and_symmetric(xs, data):
    ys = data.draw(st.lists(st.integers(0, 4), min_size=len(xs), max_size=len(xs)))
    ids = [f"c{i}" for i in range(len(xs))]
    a = RankingTable.from_scores(dict(zip(ids, map(float, xs))), "a")
    b = RankingTable.from_scores(dict(zip(ids, map(float, ys))), "b")
    expected = tau_b_oracle([-x for x in xs], [-y for y in ys])
    got = kendall_tau(a, b)
    if math.isnan(expected):
        assert math.isnan(got)
    else:
        assert got == pytest.approx(expected, abs=1e-12)
        assert kendall_tau(b, a) == pytest.approx(got, abs=1e-12)


# -- export ----------------------------------------------------------------

def test_csv_round_trip_and_text():
    table = RankingTable.from_scores({"m1": 2.5, "m2": 2.5, "m3": 0.1}, "copeland")
    text = ranking_to_csv(table)
    assert text.splitlines()[0] == "rank,model_id,score,method"
    assert ranking_from_csv(text) == table
    rendered = format_table(table)
    assert "ties: {m1, m2}" in rendered and "method: copeland" in rendered
