"""Acceptance criteria, one test per criterion.

Each test times itself against its budget and prints a single
``criterion N: PASS|FAIL`` line (visible with ``pytest -v`` or ``-s``).
"""

from __future__ import annotations

import json
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from hwrec.cli import main as cli_main
from hwrec.domain import MetricKind, RankingTable, WeightConfig
from hwrec.fusion import TrainHyper, TrainingExample, init_params, ranking_loss, recommend_fusion, train_scorer
from hwrec.harness import Harness, ScriptedSensors, ScriptedWorkload, StabilizePolicy
from hwrec.metrics import classification_metrics, harmonic_mean, normalize, preset_config, weight_config
from hwrec.ranking import (
    aggregate_records,
    copeland,
    kendall_tau,
    objective_score,
    rank_by_copeland,
    rank_by_objective,
)
from hwrec.shadow import SelectorOutput, combine_selectors, energy_selector
from hwrec.synthgen import WorldSpec, device_sensors, generate_world, true_ranking, world_workload

from conftest import make_card, make_hw, make_task
from oracles import copeland_oracle

pytestmark = pytest.mark.acceptance

TRAIN = TrainHyper(lr=0.5, epochs=300)


@contextmanager
def criterion(number: int, title: str, budget_s: float, capsys):
    start = time.perf_counter()
    detail: dict = {}
    ok = False
    try:
        yield detail
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        within = elapsed < budget_s
        extra = " ".join(f"{k}={v}" for k, v in detail.items())
        status = "PASS" if ok and within else "FAIL"
        with capsys.disabled():
            print(f"\ncriterion {number}: {status} {title} ({elapsed:.2f}s / {budget_s:g}s) {extra}".rstrip())
    assert within, f"criterion {number} took {elapsed:.2f}s, budget {budget_s}s"


# ---------------------------------------------------------------------------

def test_criterion_1_copeland_oracle(capsys):
    with criterion(1, "weighted Copeland equals exhaustive pairwise tally", 5, capsys) as info:
        rng = np.random.default_rng(2024)
        mismatches = 0
        for _ in range(500):
            n, k = int(rng.integers(1, 6)), int(rng.integers(1, 5))
            cands = [f"c{i}" for i in range(n)]
            raw = rng.random(k)
            weights = list(raw / raw.sum())
            lower = [bool(b) for b in rng.integers(0, 2, k)]
            values = [dict(zip(cands, map(float, rng.integers(0, 4, n)))) for _ in range(k)]
            tables = [RankingTable.from_scores({c: (-v if low else v) for c, v in vals.items()}, "m")
                      for vals, low in zip(values, lower)]
            got = copeland(tables, weights)
            expected = copeland_oracle(values, weights, lower)
            if dict(zip(got.candidate_ids, got.scores)) != expected:
                mismatches += 1
            # order: score descending, then id
            if list(got.candidate_ids) != sorted(expected, key=lambda c: (-expected[c], c)):
                mismatches += 1
        info["instances"] = 500
        info["mismatches"] = mismatches
        assert mismatches == 0


HW = [MetricKind.EXECUTION_TIME_MS, MetricKind.MEMORY_MB, MetricKind.POWER_W, MetricKind.CARBON_FOOTPRINT]


def test_criterion_2_objective_properties(capsys):
    with criterion(2, "objective monotonicity, threshold-scale invariance, worked example", 1, capsys) as info:
        example = objective_score(0.92, {MetricKind.EXECUTION_TIME_MS: 90.0},
                                  weight_config({"execution_time_ms": 1.0}, {"execution_time_ms": 100.0}))
        assert abs(example - 0.92 * 100 / 90) <= 1e-9
        assert abs(example - 1.0222222222) <= 1e-9
        info["example"] = f"{example:.10f}"

        rng = np.random.default_rng(7)
        for _ in range(500):
            k = int(rng.integers(1, 5))
            kinds = HW[:k]
            raw = rng.random(k + 1)
            weights = dict(zip([*kinds, MetricKind.ACCURACY], raw / raw.sum()))
            drift = 1.0 - sum(weights.values())
            weights[MetricKind.ACCURACY] += drift
            thresholds = {kd: float(rng.uniform(1, 100)) for kd in kinds}
            combiner = "sum" if rng.random() < 0.5 else "product"
            cfg = weight_config(weights, thresholds, combiner)
            n = int(rng.integers(2, 7))
            cands = {
                f"m{i}": (float(rng.uniform(0.5, 1.0)), {kd: float(rng.uniform(0.5, 200)) for kd in kinds})
                for i in range(n)
            }
            # monotonicity: improving one metric never lowers, and raises when weighted
            mid, (f, hw) = next(iter(cands.items()))
            which = kinds[int(rng.integers(k))]
            better = dict(hw)
            better[which] *= float(rng.uniform(0.1, 0.99))
            before, after = objective_score(f, hw, cfg), objective_score(f, better, cfg)
            assert after >= before
            if weights[which] > 1e-9:
                assert after > before
            # threshold-scale invariance of the ranking
            which = kinds[int(rng.integers(k))]
            a = float(rng.uniform(0.01, 100))
            scaled_cfg = WeightConfig(cfg.weights, {**cfg.thresholds, which: cfg.thresholds[which] * a}, combiner)
            scaled = {m: (fa, {**h, which: h[which] * a}) for m, (fa, h) in cands.items()}
            base, moved = rank_by_objective(cands, cfg), rank_by_objective(scaled, scaled_cfg)
            assert base.candidate_ids[0] == moved.candidate_ids[0]
            gaps = np.diff(base.scores)
            if np.all(np.abs(gaps) > 1e-9):
                assert base.candidate_ids == moved.candidate_ids
        info["sets"] = 500


def test_criterion_3_benchmark_procedure(capsys):
    with criterion(3, "benchmark record counts, batch order and stabilize call sites", 5, capsys) as info:
        for sizes in ([32, 32], [100, 7], [64, 33, 1]):
            events: list[str] = []
            sensors = ScriptedSensors(events=events)
            pairs = [(ScriptedWorkload(f"m{i}", events=events), make_task(f"t{i}", num_samples=n))
                     for i, n in enumerate(sizes)]
            report = Harness(sensors, StabilizePolicy(), sleep=lambda s: None).benchmark_pairs(pairs, make_hw())
            assert len(report.records) == sum(100 + math.ceil(n / 32) for n in sizes)
            assert len(report.records) == len(sizes) * 100 + sum(math.ceil(n / 32) for n in sizes)
            compact = [e for e in events if e == "cpu_util" or e.startswith("forward")]
            expected = ["cpu_util"]
            for n in sizes:
                fixed = [32] * (n // 32) + ([n % 32] if n % 32 else [])
                expected += [f"forward:{b}" for b in range(1, 101)] + [f"forward:{b}" for b in fixed]
                expected += ["cpu_util"]
            assert compact == expected
            assert report.stabilize_calls == len(sizes) + 1
            for i, n in enumerate(sizes):
                mine = [r for r in report.records if r.model_id == f"m{i}"]
                assert [r.batch_size for r in mine[:100]] == list(range(1, 101))
                assert [r.batch_size for r in mine[100:]] == [32] * (n // 32) + ([n % 32] if n % 32 else [])
        info["fixtures"] = 3


def _bench_all(world):
    records = []
    for hw in world.hardware:
        sensors = device_sensors(world, hw.id)
        pairs = [(world_workload(world, m.id, t.id, hw.id, sensors)[0], t) for t in world.tasks for m in world.models]
        records += Harness(sensors, StabilizePolicy(), sleep=lambda s: None).benchmark_pairs(pairs, hw).records
    return records


def _mean_adjacent_gap(world, cfg):
    """Mean gap between adjacent models, in the units the noise acts on."""
    gaps = []
    for t in world.tasks:
        for h in world.hardware:
            for kind in cfg.weights:
                vals = sorted(world.true_metrics(m.id, t.id, h.id)[kind] for m in world.models)
                if kind is MetricKind.ACCURACY:
                    gaps += list(np.diff(vals))
                else:
                    gaps += list(np.diff(np.log(vals)))
    gaps = [g for g in gaps if g > 0]
    return float(np.mean(gaps))


def test_criterion_4_end_to_end_consistency(capsys):
    with criterion(4, "noiseless pipeline equals planted truth; 1% noise keeps tau-b >= 0.9", 30, capsys) as info:
        cfg = preset_config("balanced")
        exact, taus = 0, []
        for seed in range(20):
            spec = dict(n_models=int(2 + seed % 5), n_hardware=int(1 + seed % 3), n_tasks=int(1 + (seed // 3) % 3),
                        seed=seed, interaction_strength=0.5 * (seed % 3), samples_per_task=64)
            world = generate_world(WorldSpec(**spec))
            records = _bench_all(world)
            ok = True
            for t in world.tasks:
                for h in world.hardware:
                    scope = [r for r in records if r.task_id == t.id and r.hardware_id == h.id]
                    got = rank_by_copeland(aggregate_records(scope, (t.id, h.id)), cfg)
                    ok &= got == true_ranking(world, t.id, h.id, cfg).table.with_method("copeland")
            exact += ok

            noisy_spec = dict(spec, n_models=6)
            base = generate_world(WorldSpec(**noisy_spec))
            sigma = 0.01 * _mean_adjacent_gap(base, cfg)
            noisy = generate_world(WorldSpec(**noisy_spec, noise_sigma=sigma))
            records = _bench_all(noisy)
            for t in noisy.tasks:
                for h in noisy.hardware:
                    scope = [r for r in records if r.task_id == t.id and r.hardware_id == h.id]
                    got = rank_by_copeland(aggregate_records(scope, (t.id, h.id)), cfg)
                    tau = kendall_tau(got, true_ranking(noisy, t.id, h.id, cfg).table)
                    taus.append(1.0 if math.isnan(tau) else tau)
        info["exact_worlds"] = f"{exact}/20"
        info["noisy_mean_tau"] = f"{np.mean(taus):.4f}"
        assert exact == 20
        assert np.mean(taus) >= 0.9


def test_criterion_5_gradient_check(capsys):
    with criterion(5, "analytic gradients match central differences", 10, capsys) as info:
        worst = 0.0
        eps = 1e-6
        for inst in range(50):
            rng = np.random.default_rng(1000 + inst)
            d = int(rng.integers(2, 9))
            n = int(rng.integers(2, 6))
            mode = ("fusion", "task", "hardware")[inst % 3]
            fusion_mode = "concat" if inst % 4 == 0 else "add"
            refine_dim = 3 if inst % 2 else None
            params = init_params(4, 3, 5, d=d, heads=int(rng.integers(1, 4)), mode=mode,
                                 fusion_mode=fusion_mode if mode == "fusion" else "add",
                                 refine_dim=refine_dim, seed=inst)
            cards = [make_card(f"m{i}", rng.normal(size=4)) for i in range(n)]
            truth = RankingTable.from_scores({c.id: float(rng.integers(0, 3)) for c in cards}, "gt")
            refine = {c.id: rng.normal(size=3) for c in cards} if refine_dim else None
            ex = [TrainingExample(make_task(features=rng.normal(size=3)), make_hw(features=rng.normal(size=5)),
                                  cards, truth, refine)]
            margin = float(rng.uniform(0.1, 2.0))
            _, grads = ranking_loss(ex, params, margin)
            for name, g in grads.items():
                arr = getattr(params, name)
                num = np.zeros_like(arr)
                for idx in np.ndindex(arr.shape):
                    orig = arr[idx]
                    arr[idx] = orig + eps
                    up, _ = ranking_loss(ex, params, margin, with_grad=False)
                    arr[idx] = orig - eps
                    down, _ = ranking_loss(ex, params, margin, with_grad=False)
                    arr[idx] = orig
                    num[idx] = (up - down) / (2 * eps)
                scale = max(np.abs(num).max(), np.abs(g).max())
                if scale > 0:
                    worst = max(worst, float(np.abs(num - g).max() / scale))
        info["worst_rel_err"] = f"{worst:.2e}"
        assert worst < 1e-4


def _fusion_vs_ablated(seed):
    cfg = weight_config({"execution_time_ms": 1.0})
    world = generate_world(WorldSpec(n_models=8, n_hardware=10, n_tasks=2, seed=seed, interaction_strength=1.0))

    def example(t, h):
        return TrainingExample(t, h, world.models, true_ranking(world, t.id, h.id, cfg))

    train = [example(t, h) for t in world.tasks for h in world.hardware[:7]]
    held_out = [example(t, h) for t in world.tasks for h in world.hardware[7:]]
    out = {}
    for mode in ("fusion", "task"):
        params = train_scorer(train, TrainHyper(lr=0.5, epochs=300, seed=seed), mode=mode).params
        out[mode] = float(np.mean([
            kendall_tau(recommend_fusion(e.task, e.hardware, e.candidates, params), e.truth_table())
            for e in held_out
        ]))
    return out


def _planted_linear_tau(seed):
    rng = np.random.default_rng(seed)

    def examples(count):
        out = []
        for _ in range(count):
            cards = [make_card(f"m{i}", rng.normal(size=5)) for i in range(6)]
            truth = RankingTable.from_scores({c.id: c.model_features[0] for c in cards}, "gt")
            out.append(TrainingExample(make_task(features=[1.0, *rng.normal(size=3)]),
                                       make_hw(features=[1.0, *rng.normal(size=4)]), cards, truth))
        return out

    params = train_scorer(examples(20), TrainHyper(lr=0.5, epochs=300, d=4, seed=seed), mode="fusion").params
    return float(np.mean([kendall_tau(recommend_fusion(e.task, e.hardware, e.candidates, params), e.truth)
                          for e in examples(10)]))


def test_criterion_6_fusion_hardware_awareness(capsys):
    with criterion(6, "hw-augmented scorer beats hw-ablated on held-out hardware", 120, capsys) as info:
        results = [_fusion_vs_ablated(seed) for seed in range(10)]
        fusion = np.mean([r["fusion"] for r in results])
        ablated = np.mean([r["task"] for r in results])
        planted = np.mean([_planted_linear_tau(seed) for seed in range(10)])
        info["fusion_tau"] = f"{fusion:.3f}"
        info["ablated_tau"] = f"{ablated:.3f}"
        info["planted_linear_tau"] = f"{planted:.3f}"
        assert fusion > ablated
        assert planted >= 0.8


def _order(kind, order):
    return SelectorOutput(kind, RankingTable.from_scores({c: float(len(order) - i) for i, c in enumerate(order)}, "s"))


def test_criterion_7_shadow(capsys):
    with criterion(7, "shadow unanimity, degeneracy, reversed ties, third selector", 1, capsys):
        assert combine_selectors([_order("Task", "cab"), _order("Hardware", "cab")]).candidate_ids == tuple("cab")
        degenerate = combine_selectors([_order("Task", "bca"), _order("Hardware", "acb")],
                                       {"Task": 1.0, "Hardware": 0.0})
        assert degenerate.candidate_ids == tuple("bca")
        reversed_ = combine_selectors([_order("Task", "abc"), _order("Hardware", "cba")])
        assert reversed_.candidate_ids == tuple("abc") and reversed_.ties == ((0, 1, 2),)
        assert reversed_.scores == (1.0, 1.0, 1.0)
        energy = energy_selector({"a": {MetricKind.POWER_W: 1.0}, "b": {MetricKind.POWER_W: 3.0},
                                  "c": {MetricKind.POWER_W: 2.0}})
        three = combine_selectors([_order("Task", "abc"), _order("Hardware", "cba"), energy])
        # energy (a > c > b) breaks the two-way deadlock
        assert three.candidate_ids == tuple("acb") and three.method == "shadow"


def _cli(*argv):
    code = cli_main([str(a) for a in argv])
    assert code == 0, f"hwrec {' '.join(map(str, argv))} exited {code}"


def test_criterion_8_cli_pipeline(tmp_path, capsys):
    with criterion(8, "scripted CLI pipeline reaches eval tau >= 0.8", 180, capsys) as info:
        home = tmp_path / "home"
        world_dir = tmp_path / "world"
        spec = {"n_models": 6, "n_hardware": 3, "n_tasks": 2, "seed": 3}
        _cli("synthgen", "--spec", json.dumps(spec), "--out", world_dir)
        for kind in ("models", "hardware", "tasks"):
            _cli("--home", home, "ingest", "--kind", kind, "--file", world_dir / f"{kind}.json")
        for hw in ("hw0", "hw1", "hw2"):
            _cli("--home", home, "bench", "--hardware", hw, "--pairs", world_dir / "pairs.json", "--sensor", "synthetic")
        _cli("--home", home, "train", "--mode", "fusion", "--hyper", '{"lr": 0.5, "epochs": 300}',
             "--out", tmp_path / "scorer.json", "--log", tmp_path / "log.csv")
        taus = []
        for task in ("t0", "t1"):
            for hw in ("hw0", "hw1", "hw2"):
                truth, pred = tmp_path / f"truth-{task}-{hw}.json", tmp_path / f"pred-{task}-{hw}.json"
                _cli("--home", home, "rank", "--task", task, "--hardware", hw, "--out", truth)
                _cli("--home", home, "recommend", "--mode", "fusion", "--task", task, "--hardware", hw,
                     "--scorer", tmp_path / "scorer.json", "--top-k", 3, "--out", pred)
                capsys.readouterr()
                _cli("eval", "--pred", pred, "--truth", truth)
                taus.append(float(capsys.readouterr().out.strip()))
        info["eval_taus"] = ",".join(f"{t:.2f}" for t in taus)
        assert min(taus) >= 0.8


def test_criterion_9_metrics(capsys):
    with criterion(9, "f1 example, confusion properties, normalize scale invariance", 1, capsys) as info:
        f1 = harmonic_mean(0.88, 0.85)
        assert abs(f1 - 0.8647) < 5e-5
        perfect = classification_metrics([[50, 0], [0, 50]])
        assert (perfect.accuracy, perfect.precision, perfect.recall, perfect.f1) == (1.0, 1.0, 1.0, 1.0)
        assert abs(classification_metrics([[45, 5], [10, 40]]).accuracy - 0.85) < 1e-12
        rng = np.random.default_rng(9)
        for _ in range(200):
            k = int(rng.integers(2, 6))
            cm = rng.integers(0, 30, (k, k))
            cm[0, 0] += 1
            perm = rng.permutation(k)
            a, b = classification_metrics(cm), classification_metrics(cm[np.ix_(perm, perm)])
            assert abs(a.f1 - b.f1) < 1e-12 and abs(a.accuracy - b.accuracy) < 1e-12
            if a.precision > 0 and a.recall > 0:
                assert min(a.precision, a.recall) - 1e-12 <= a.f1 <= max(a.precision, a.recall) + 1e-12
        kinds = list(MetricKind)
        for _ in range(1000):
            kind = kinds[int(rng.integers(len(kinds)))]
            v, t, s = rng.uniform(0, 1e4), rng.uniform(1e-3, 1e4), rng.uniform(1e-3, 1e3)
            assert math.isclose(normalize(kind, s * v, s * t), normalize(kind, v, t), rel_tol=1e-12)
        info["f1"] = f"{f1:.4f}"
