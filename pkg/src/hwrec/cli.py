"""hwrec command line.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import warnings
from pathlib import Path
from typing import Any, Sequence

from hwrec.domain import MetricGroup, RankingTable, WeightConfig
from hwrec.fusion import (
    ScorerParams,
    TrainHyper,
    TrainingDivergedError,
    TrainingExample,
    UntrainedScorerError,
    recommend_fusion,
    refinement_features,
    train_scorer,
)
from hwrec.harness import (
    Harness,
    HostSensors,
    ScriptedSensors,
    ScriptedWorkload,
    SensorError,
    StabilizePolicy,
    WorkloadFailure,
    default_sensor_kind,
)
from hwrec.metrics import DEFAULT_COMPOSITE, PRESETS, CompositeSpec, preset_config, weight_config
from hwrec.ranking import (
    RankingError,
    aggregate_records,
    format_table,
    kendall_tau,
    objective_candidates,
    rank_by_copeland,
    rank_by_objective,
    ranking_from_csv,
    ranking_to_csv,
    ranking_to_json,
)
from hwrec.shadow import combine_selectors, energy_selector, hardware_selector, shadow_to_csv, shadow_to_json, task_selector
from hwrec.store import HOME_ENV, RegistryValidationError, Store, StoreError, write_json
from hwrec.synthgen import PlantedWorld, WorldSpec, device_sensors, generate_world, world_workload

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
DEFAULT_TOP_K = 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _json_arg(value: str) -> Any:
    """Inline JSON (starting with ``{`` or ``[``) or a path to a JSON file."""
    text = value.strip()
    if not text.startswith(("{", "[")):
        path = Path(value)
        if not path.exists():
            raise DataError(f"file not found: {value}")
        text = path.read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed JSON in {value if len(value) < 60 else value[:57] + '...'}: "
                        f"line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def _load_config(args) -> dict[str, Any]:
    if not args.config:
        return {}
    cfg = _json_arg(args.config)
    if not isinstance(cfg, dict):
        raise DataError("config file must hold a JSON object")
    return cfg


def _weights(args, config: dict[str, Any]) -> WeightConfig:
    """Flags override the config file: --weights, then --preset, then config."""
    if getattr(args, "weights", None):
        data = _json_arg(args.weights)
        if "weights" not in data:
            data = {"weights": data}
        return WeightConfig.from_dict(data)
    if getattr(args, "preset", None):
        return preset_config(args.preset)
    if "weights" in config:
        return weight_config(config["weights"], config.get("thresholds"), config.get("combiner", "sum"))
    if "preset" in config:
        return preset_config(config["preset"])
    return weight_config()


def _composite(config: dict[str, Any]) -> CompositeSpec:
    return CompositeSpec.from_dict(config["composite"]) if "composite" in config else DEFAULT_COMPOSITE


def _emit(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _write_ranking(path: str, table: RankingTable, **extra) -> None:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix.lower() == ".csv":
        out.write_text(ranking_to_csv(table))
    else:
        out.write_text(ranking_to_json(table, **extra) + "\n")


def _read_ranking(path: str) -> RankingTable:
    p = Path(path)
    if not p.exists():
        raise DataError(f"file not found: {path}")
    if p.suffix.lower() == ".csv":
        return ranking_from_csv(p.read_text())
    data = _json_arg(path)
    if not isinstance(data, dict) or "candidate_ids" not in data:
        raise DataError(f"{path} is not a ranking table")
    return RankingTable.from_dict(data)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synthgen(args, store: Store, config: dict) -> int:
    spec = WorldSpec.from_dict(_json_arg(args.spec))
    world = generate_world(spec)
    out = Path(args.out)
    write_json(out / "world.json", world.to_dict())
    write_json(out / "models.json", [m.to_dict() for m in world.models])
    write_json(out / "hardware.json", [h.to_dict() for h in world.hardware])
    write_json(out / "tasks.json", [t.to_dict() for t in world.tasks])
    pairs = [[m.id, t.id] for t in world.tasks for m in world.models]
    write_json(out / "pairs.json", {"world": "world.json", "pairs": pairs})
    _emit(f"wrote world (seed {spec.seed}): {len(world.models)} models, {len(world.hardware)} hardware, "
          f"{len(world.tasks)} tasks, {len(pairs)} pairs -> {out}")
    return EXIT_OK


def cmd_ingest(args, store: Store, config: dict) -> int:
    result = store.ingest_registry(args.file, args.kind)
    if args.format == "json":
        _emit(json.dumps({"kind": result.kind.value, "count": result.count, "violations": []}))
    else:
        _emit(f"ingested {result.count} {result.kind.value} into {store.root}")
    return EXIT_OK


def _pairs_file(path: str) -> tuple[PlantedWorld | None, list[tuple[str, str]]]:
    data = _json_arg(path)
    if not isinstance(data, dict) or "pairs" not in data:
        raise DataError(f"{path}: expected an object with a 'pairs' list")
    world = None
    if data.get("world"):
        world_path = Path(data["world"])
        if not world_path.is_absolute():
            world_path = Path(path).parent / world_path
        if not world_path.exists():
            raise DataError(f"world file not found: {world_path}")
        world = PlantedWorld.from_dict(json.loads(world_path.read_text()))
    pairs = []
    for entry in data["pairs"]:
        if not (isinstance(entry, (list, tuple)) and len(entry) == 2):
            raise DataError(f"{path}: each pair must be [model_id, task_id], got {entry!r}")
        pairs.append((str(entry[0]), str(entry[1])))
    return world, pairs


def cmd_bench(args, store: Store, config: dict) -> int:
    hardware = store.lookup("hardware", args.hardware)
    models = {m.id: m for m in store.models()}
    tasks = {t.id: t for t in store.tasks()}
    world, pairs = _pairs_file(args.pairs)
    for model_id, task_id in pairs:
        if model_id not in models:
            raise DataError(f"unknown model id {model_id!r}")
        if task_id not in tasks:
            raise DataError(f"unknown task id {task_id!r}")

    policy_data = _json_arg(args.policy) if args.policy else config.get("policy")
    policy = StabilizePolicy.from_dict(policy_data) if policy_data else StabilizePolicy()
    kind = default_sensor_kind(args.sensor)
    if kind == "synthetic" and world is None:
        raise DataError("synthetic sensors need a 'world' entry in the pairs file")

    if kind == "synthetic":
        sensors = device_sensors(world, args.hardware)
    elif kind == "scripted":
        sensors = ScriptedSensors()
    else:
        sensors = HostSensors()

    workloads = []
    sim_sensors = sensors if kind == "synthetic" else (device_sensors(world, args.hardware) if world else None)
    for i, (model_id, task_id) in enumerate(pairs):
        if world is not None:
            workload, _ = world_workload(world, model_id, task_id, args.hardware, sim_sensors)
        else:
            card = models[model_id]
            workload = ScriptedWorkload(model_id, intercept_ms=1.0 + card.param_count / 1e6, slope_ms=0.1, seed=i)
        workloads.append((workload, tasks[task_id]))

    harness = Harness(sensors, policy, composite=_composite(config))
    report = harness.benchmark_pairs(workloads, hardware, store)
    _emit(json.dumps(report.to_dict(), indent=2) if args.format == "json" else report.to_text())
    return EXIT_RUNTIME if report.failed else EXIT_OK


def _scope_aggregates(store: Store, task_id: str, hardware_id: str, statistic: str = "mean"):
    records = store.query_records(task_id=task_id, hardware_id=hardware_id)
    if not records:
        raise DataError(f"no benchmark records for task {task_id!r} on hardware {hardware_id!r}")
    aggregates = aggregate_records(records, (task_id, hardware_id), statistic)
    for w in aggregates.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return aggregates


def cmd_rank(args, store: Store, config: dict) -> int:
    store.lookup("tasks", args.task)
    store.lookup("hardware", args.hardware)
    cfg = _weights(args, config)
    aggregates = _scope_aggregates(store, args.task, args.hardware, args.statistic)
    if args.method == "objective":
        table = rank_by_objective(objective_candidates(aggregates), cfg)
    else:
        table = rank_by_copeland(aggregates, cfg)
    extra = {"task_id": args.task, "hardware_id": args.hardware}
    if args.out:
        _write_ranking(args.out, table, **extra)
    _emit(ranking_to_json(table, **extra) if args.format == "json" else format_table(table))
    return EXIT_OK


def _training_set(store: Store, mode: str, cfg: WeightConfig, statistic: str) -> list[TrainingExample]:
    models = {m.id: m for m in store.models()}
    tasks = {t.id: t for t in store.tasks()}
    hardware = {h.id: h for h in store.hardware()}
    scopes: dict[tuple[str, str], list] = {}
    for _, rec in store.scan_records():
        scopes.setdefault((rec.task_id, rec.hardware_id), []).append(rec)
    if mode == "hardware":
        cfg = cfg.restricted(MetricGroup.HARDWARE)
    elif mode == "task":
        cfg = cfg.restricted(MetricGroup.MODEL)
    examples = []
    for (task_id, hw_id), records in sorted(scopes.items()):
        if task_id not in tasks or hw_id not in hardware:
            raise DataError(f"records reference unregistered scope ({task_id}, {hw_id})")
        aggregates = aggregate_records(records, (task_id, hw_id), statistic)
        if len(aggregates) < 2:
            continue
        unknown = [m for m in aggregates if m not in models]
        if unknown:
            raise DataError(f"records reference unregistered models {unknown}")
        truth = rank_by_copeland(aggregates, cfg)
        examples.append(
            TrainingExample(
                tasks[task_id],
                hardware[hw_id],
                [models[m] for m in aggregates],
                truth,
                refinement_features(aggregates) if mode == "fusion" else None,
            )
        )
    if not examples:
        raise DataError(f"no benchmarked scope in {store.root} has two or more models")
    return examples


def cmd_train(args, store: Store, config: dict) -> int:
    data_store = Store(args.data) if args.data else store
    hyper_data = dict(config.get("hyper", {}))
    if args.hyper:
        hyper_data.update(_json_arg(args.hyper))
    hyper = TrainHyper.from_dict(hyper_data)
    cfg = _weights(args, config)
    examples = _training_set(data_store, args.mode, cfg, args.statistic)
    result = train_scorer(examples, hyper, mode=args.mode)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    result.params.save(out)
    if args.log:
        Path(args.log).write_text(result.log_csv())
    final = result.log[-1] if result.log else None
    summary = {
        "mode": args.mode,
        "examples": len(examples),
        "epochs": hyper.epochs,
        "final_loss": final.loss if final else None,
        "final_train_tau": final.train_tau if final else None,
        "artifact": str(out),
    }
    if args.format == "json":
        _emit(json.dumps(summary))
    else:
        _emit(f"trained {args.mode} scorer on {len(examples)} scopes for {hyper.epochs} epochs"
              + (f": loss {final.loss:.4f}, train tau {final.train_tau:.3f}" if final else "")
              + f" -> {out}")
    return EXIT_OK


def _load_scorers(paths: Sequence[str]) -> dict[str, ScorerParams]:
    out = {}
    for path in paths:
        if not Path(path).exists():
            raise DataError(f"scorer artifact not found: {path}")
        try:
            params = ScorerParams.load(path)
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: {exc}") from exc
        if params.mode in out:
            raise UsageError(f"two {params.mode} scorers given")
        out[params.mode] = params
    return out


def cmd_recommend(args, store: Store, config: dict) -> int:
    task = store.lookup("tasks", args.task)
    hw = store.lookup("hardware", args.hardware)
    candidates = store.models()
    if not candidates:
        raise DataError(f"model registry in {store.root} is empty")
    scorers = _load_scorers(args.scorer)
    extra = {"task_id": args.task, "hardware_id": args.hardware}

    if args.mode == "fusion":
        if set(scorers) != {"fusion"}:
            raise UsageError("--mode fusion needs exactly one fusion scorer")
        params = scorers["fusion"]
        refine = None
        if args.top_k is not None and params.W_refine is not None:
            records = store.query_records(task_id=args.task, hardware_id=args.hardware)
            if records:
                refine = refinement_features(aggregate_records(records, (args.task, args.hardware)))
                missing = [c.id for c in candidates if c.id not in refine]
                if missing:
                    print(f"warning: no benchmark data for {missing}; refinement skipped", file=sys.stderr)
                    refine = None
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            table = recommend_fusion(task, hw, candidates, params, args.top_k, refine, method="fusion")
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        text_json = ranking_to_json(table, **extra)
        outputs = None
    else:
        if not {"task", "hardware"} <= set(scorers):
            raise UsageError("--mode shadow needs a task scorer and a hardware scorer")
        outputs = [
            task_selector(task, candidates, scorers["task"]),
            hardware_selector(hw, candidates, scorers["hardware"]),
        ]
        if args.energy:
            outputs.append(energy_selector(_scope_aggregates(store, args.task, args.hardware)))
        weights = _json_arg(args.selector_weights) if args.selector_weights else None
        table = combine_selectors(outputs, weights)
        text_json = shadow_to_json(table, outputs)

    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        if outputs is not None:
            out.write_text(shadow_to_csv(table, outputs) if out.suffix.lower() == ".csv" else text_json + "\n")
        else:
            _write_ranking(args.out, table, **extra)
    _emit(text_json if args.format == "json" else format_table(table))
    return EXIT_OK


def cmd_eval(args, store: Store, config: dict) -> int:
    pred = _read_ranking(args.pred)
    truth = _read_ranking(args.truth)
    if set(pred.candidate_ids) != set(truth.candidate_ids):
        raise DataError("prediction and truth rank different candidates")
    tau = kendall_tau(pred, truth)
    if args.format == "json":
        _emit(json.dumps({"kendall_tau_b": None if math.isnan(tau) else tau, "n": len(pred)}))
    else:
        _emit(repr(tau) if not math.isnan(tau) else "nan")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_format(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=("text", "json"), default="text", help="output format (default text)")


def _add_weights(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--weights", help="weight config: inline JSON or path ({metric: weight} or {weights, thresholds, combiner})")
    g.add_argument("--preset", choices=sorted(PRESETS), help="named weight preset")
    p.add_argument("--statistic", choices=("mean", "median"), default="mean", help="per-model aggregate statistic")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hwrec", description="Hardware-aware pre-trained model recommendation.")
    parser.add_argument("--home", help=f"store directory (default ${HOME_ENV} or ./.hwrec)")
    parser.add_argument("--config", help="JSON config with defaults for weights, composite, policy, hyper")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synthgen", help="generate a synthetic world and its registries")
    p.add_argument("--spec", required=True, help="world spec: inline JSON or path")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synthgen)

    p = sub.add_parser("ingest", help="validate and load a registry file into the store")
    p.add_argument("--kind", required=True, choices=("models", "hardware", "tasks"))
    p.add_argument("--file", required=True, help="registry JSON file")
    _add_format(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("bench", help="benchmark (model, task) pairs on one device")
    p.add_argument("--hardware", required=True, help="hardware id")
    p.add_argument("--pairs", required=True, help='pairs file: {"world": path, "pairs": [[model, task], ...]}')
    p.add_argument("--sensor", choices=("host", "scripted", "synthetic"), help="sensor provider (default $HWREC_SENSOR or synthetic)")
    p.add_argument("--policy", help="stabilize policy: inline JSON or path")
    _add_format(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("rank", help="rank benchmarked models for a (task, hardware) scope")
    p.add_argument("--task", required=True)
    p.add_argument("--hardware", required=True)
    p.add_argument("--method", choices=("copeland", "objective"), default="copeland")
    p.add_argument("--out", help="write the ranking to a .csv or .json file")
    _add_weights(p)
    _add_format(p)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("train", help="train a recommender scorer from benchmark data")
    p.add_argument("--mode", required=True, choices=("fusion", "task", "hardware"))
    p.add_argument("--data", help="store directory holding the training data (default --home)")
    p.add_argument("--hyper", help="hyperparameters: inline JSON or path (lr, epochs, seed, margin, d, heads)")
    p.add_argument("--out", required=True, help="scorer artifact path")
    p.add_argument("--log", help="write the per-epoch training log as CSV")
    _add_weights(p)
    _add_format(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("recommend", help="rank registered models for a task on a device")
    p.add_argument("--mode", required=True, choices=("fusion", "shadow"))
    p.add_argument("--task", required=True)
    p.add_argument("--hardware", required=True)
    p.add_argument("--scorer", required=True, action="append",
                   help="scorer artifact; give a task and a hardware scorer for shadow (repeat the flag)")
    p.add_argument("--top-k", type=int, help=f"refine the top K candidates with benchmark data (suggested {DEFAULT_TOP_K})")
    p.add_argument("--energy", action="store_true", help="shadow: add a power-based selector from benchmark data")
    p.add_argument("--selector-weights", help='shadow: selector weights, e.g. {"Task": 0.7, "Hardware": 0.3}')
    p.add_argument("--out", help="also write the ranking to a .csv or .json file")
    _add_format(p)
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("eval", help="Kendall tau-b between a predicted and a reference ranking")
    p.add_argument("--pred", required=True, help="predicted ranking (.json or .csv)")
    p.add_argument("--truth", required=True, help="reference ranking (.json or .csv)")
    _add_format(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    store = Store(args.home or os.environ.get(HOME_ENV, ".hwrec"))
    try:
        config = _load_config(args)
        return args.func(args, store, config)
    except UsageError as exc:
        print(f"hwrec {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RegistryValidationError as exc:
        print(f"hwrec {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDivergedError, WorkloadFailure, SensorError, UntrainedScorerError) as exc:
        print(f"hwrec {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (DataError, StoreError, RankingError, KeyError, ValueError, FileNotFoundError) as exc:
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"hwrec {args.command}: {message}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort runtime failure
        print(f"hwrec {args.command}: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
