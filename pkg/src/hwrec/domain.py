"""Core data types shared across the package.

Registry entities (models, hardware, tasks) are plain frozen dataclasses that
accept any values; their invariants are checked by :func:`validate_registry`
so that a bad registry file can be reported in full rather than failing on
the first problem.  Configuration-like values (:class:`WeightConfig`,
:class:`RankingTable`) validate on construction.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence


class MetricGroup(str, Enum):
    HARDWARE = "Hardware"
    MODEL = "Model"


class MetricDirection(str, Enum):
    LOWER_IS_BETTER = "LowerIsBetter"
    HIGHER_IS_BETTER = "HigherIsBetter"


class MetricKind(str, Enum):
    """The nine benchmark metrics, split into a Hardware and a Model group."""

    EXECUTION_TIME_MS = "execution_time_ms"
    MEMORY_MB = "memory_mb"
    POWER_W = "power_w"
    CPU_TEMP_C = "cpu_temp_c"
    CARBON_FOOTPRINT = "carbon_footprint"
    ACCURACY = "accuracy"
    PRECISION = "precision"
    RECALL = "recall"
    F1 = "f1"

    @property
    def group(self) -> MetricGroup:
        return MetricGroup.HARDWARE if self in HARDWARE_METRICS else MetricGroup.MODEL

    @property
    def direction(self) -> MetricDirection:
        if self.group is MetricGroup.HARDWARE:
            return MetricDirection.LOWER_IS_BETTER
        return MetricDirection.HIGHER_IS_BETTER

    @property
    def lower_is_better(self) -> bool:
        return self.direction is MetricDirection.LOWER_IS_BETTER


HARDWARE_METRICS: tuple[MetricKind, ...] = (
    MetricKind.EXECUTION_TIME_MS,
    MetricKind.MEMORY_MB,
    MetricKind.POWER_W,
    MetricKind.CPU_TEMP_C,
    MetricKind.CARBON_FOOTPRINT,
)
MODEL_METRICS: tuple[MetricKind, ...] = (
    MetricKind.ACCURACY,
    MetricKind.PRECISION,
    MetricKind.RECALL,
    MetricKind.F1,
)


# Default normalisation budgets, in each metric's own units.
DEFAULT_THRESHOLDS: dict[MetricKind, float] = {
    MetricKind.EXECUTION_TIME_MS: 100.0,
    MetricKind.MEMORY_MB: 1024.0,
    MetricKind.POWER_W: 5.0,
    MetricKind.CPU_TEMP_C: 70.0,
    MetricKind.CARBON_FOOTPRINT: 10.0,
    MetricKind.ACCURACY: 1.0,
    MetricKind.PRECISION: 1.0,
    MetricKind.RECALL: 1.0,
    MetricKind.F1: 1.0,
}


def metric_kind(value: MetricKind | str) -> MetricKind:
    """Coerce a metric name (snake_case) to a :class:`MetricKind`."""
    if isinstance(value, MetricKind):
        return value
    try:
        return MetricKind(value)
    except ValueError:
        raise ValueError(f"unknown metric {value!r}") from None


class Phase(str, Enum):
    BATCH_SWEEP = "BatchSweep"
    FIXED_BATCH = "FixedBatch"


def _floats(values: Iterable[Any]) -> tuple[float, ...]:
    return tuple(float(v) for v in values)


def _all_finite(values: Iterable[float]) -> bool:
    return all(math.isfinite(v) for v in values)


# ---------------------------------------------------------------------------
# Registry entities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelCard:
    id: str
    name: str
    architecture_family: str
    param_count: int
    model_features: tuple[float, ...]
    source_task: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "model_features", _floats(self.model_features))

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "name": self.name,
            "architecture_family": self.architecture_family,
            "param_count": self.param_count,
            "model_features": list(self.model_features),
            "source_task": self.source_task,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ModelCard:
        return cls(
            id=str(data["id"]),
            name=str(data.get("name", data["id"])),
            architecture_family=str(data.get("architecture_family", "")),
            param_count=int(data["param_count"]),
            model_features=data["model_features"],
            source_task=str(data.get("source_task", "")),
        )

    def problems(self) -> list[str]:
        out = []
        if self.param_count < 1:
            out.append(f"param_count must be >= 1, got {self.param_count}")
        if not _all_finite(self.model_features):
            out.append("model_features contains non-finite values")
        return out


@dataclass(frozen=True)
class HardwareProfile:
    id: str
    device_name: str
    cpu_model: str
    cpu_cores: int
    cpu_freq_mhz: float
    ram_mb: float
    storage_mb: float
    hw_features: tuple[float, ...]
    accelerator: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "hw_features", _floats(self.hw_features))

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "device_name": self.device_name,
            "cpu_model": self.cpu_model,
            "cpu_cores": self.cpu_cores,
            "cpu_freq_mhz": self.cpu_freq_mhz,
            "ram_mb": self.ram_mb,
            "storage_mb": self.storage_mb,
            "accelerator": self.accelerator,
            "hw_features": list(self.hw_features),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> HardwareProfile:
        return cls(
            id=str(data["id"]),
            device_name=str(data.get("device_name", data["id"])),
            cpu_model=str(data.get("cpu_model", "")),
            cpu_cores=int(data["cpu_cores"]),
            cpu_freq_mhz=float(data["cpu_freq_mhz"]),
            ram_mb=float(data["ram_mb"]),
            storage_mb=float(data["storage_mb"]),
            accelerator=data.get("accelerator"),
            hw_features=data["hw_features"],
        )

    def problems(self) -> list[str]:
        out = []
        for name in ("cpu_cores", "cpu_freq_mhz", "ram_mb", "storage_mb"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                out.append(f"{name} must be > 0, got {value}")
        if not _all_finite(self.hw_features):
            out.append("hw_features contains non-finite values")
        return out


@dataclass(frozen=True)
class TaskDescriptor:
    id: str
    dataset_name: str
    num_classes: int
    num_samples: int
    input_shape: tuple[int, ...]
    task_features: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "task_features", _floats(self.task_features))

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "dataset_name": self.dataset_name,
            "num_classes": self.num_classes,
            "num_samples": self.num_samples,
            "input_shape": list(self.input_shape),
            "task_features": list(self.task_features),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TaskDescriptor:
        return cls(
            id=str(data["id"]),
            dataset_name=str(data.get("dataset_name", data["id"])),
            num_classes=int(data["num_classes"]),
            num_samples=int(data["num_samples"]),
            input_shape=data.get("input_shape", ()),
            task_features=data["task_features"],
        )

    def problems(self) -> list[str]:
        out = []
        if self.num_classes < 1:
            out.append(f"num_classes must be >= 1, got {self.num_classes}")
        if self.num_samples < 1:
            out.append(f"num_samples must be >= 1, got {self.num_samples}")
        if not _all_finite(self.task_features):
            out.append("task_features contains non-finite values")
        return out


@dataclass(frozen=True)
class Violation:
    """One invariant violation found by :func:`validate_registry`."""

    kind: str
    id: str
    message: str

    def __str__(self) -> str:
        return f"{self.kind}[{self.id}]: {self.message}"


def _check_entities(kind: str, items: Sequence[Any], feature_attr: str) -> list[Violation]:
    report: list[Violation] = []
    counts = Counter(item.id for item in items)
    for dup in sorted(i for i, n in counts.items() if n > 1):
        report.append(Violation(kind, dup, f"duplicate id (appears {counts[dup]} times)"))

    dims = Counter(len(getattr(item, feature_attr)) for item in items)
    # registry-wide dimension is the most common one; ties resolve to the first item
    expected = None
    if items:
        first = len(getattr(items[0], feature_attr))
        expected = max(dims, key=lambda d: (dims[d], d == first))
    for item in items:
        for msg in item.problems():
            report.append(Violation(kind, item.id, msg))
        dim = len(getattr(item, feature_attr))
        if dim != expected:
            report.append(Violation(kind, item.id, f"{feature_attr} has length {dim}, registry uses {expected}"))
    return report


def validate_registry(
    models: Sequence[ModelCard] = (),
    hardware: Sequence[HardwareProfile] = (),
    tasks: Sequence[TaskDescriptor] = (),
) -> list[Violation]:
    """Check every registry invariant and return the violations found.

    The report is empty iff all invariants hold.  Violations are returned as
    data; nothing is raised.
    """
    return (
        _check_entities("model", list(models), "model_features")
        + _check_entities("hardware", list(hardware), "hw_features")
        + _check_entities("task", list(tasks), "task_features")
    )


# ---------------------------------------------------------------------------
# Measurements and configuration
# ---------------------------------------------------------------------------


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


@dataclass(frozen=True)
class BenchmarkRecord:
    """One measured forward pass.

    ``batch_index`` is the position of the batch within its phase (0-based);
    it keeps fixed-batch records, which all share ``batch_size`` 32,
    distinguishable.  Model-group metrics are fractions in [0, 1].
    """

    model_id: str
    task_id: str
    hardware_id: str
    batch_size: int
    phase: Phase
    metrics: Mapping[MetricKind, float]
    timestamp: datetime = field(default_factory=utc_now)
    stabilized: bool = True
    batch_index: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "phase", Phase(self.phase))
        object.__setattr__(
            self, "metrics", {metric_kind(k): float(v) for k, v in dict(self.metrics).items()}
        )

    def problems(self) -> list[str]:
        out = []
        if self.batch_size < 1:
            out.append(f"batch_size must be >= 1, got {self.batch_size}")
        for kind in HARDWARE_METRICS:
            if kind not in self.metrics:
                out.append(f"missing hardware metric {kind.value}")
        for kind, value in self.metrics.items():
            if not math.isfinite(value):
                out.append(f"{kind.value} is not finite")
            elif kind.group is MetricGroup.MODEL and not 0.0 <= value <= 1.0:
                out.append(f"{kind.value} must be a fraction in [0, 1], got {value}")
        if self.metrics.get(MetricKind.EXECUTION_TIME_MS, 1.0) <= 0:
            out.append("execution_time_ms must be > 0")
        for kind in (MetricKind.MEMORY_MB, MetricKind.POWER_W):
            if self.metrics.get(kind, 0.0) < 0:
                out.append(f"{kind.value} must be >= 0")
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "model_id": self.model_id,
            "task_id": self.task_id,
            "hardware_id": self.hardware_id,
            "batch_size": self.batch_size,
            "batch_index": self.batch_index,
            "phase": self.phase.value,
            "metrics": {k.value: v for k, v in self.metrics.items()},
            "timestamp": self.timestamp.isoformat(),
            "stabilized": self.stabilized,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> BenchmarkRecord:
        ts = datetime.fromisoformat(data["timestamp"])
        if ts.tzinfo is None:
            ts = ts.replace(tzinfo=timezone.utc)
        return cls(
            model_id=data["model_id"],
            task_id=data["task_id"],
            hardware_id=data["hardware_id"],
            batch_size=int(data["batch_size"]),
            batch_index=int(data.get("batch_index", 0)),
            phase=Phase(data["phase"]),
            metrics=data["metrics"],
            timestamp=ts,
            stabilized=bool(data.get("stabilized", True)),
        )


@dataclass(frozen=True)
class WeightConfig:
    """Per-metric voter weights and normalisation thresholds.

    Weights must lie in [0, 1] and sum to 1; every weighted metric needs a
    strictly positive threshold (in the metric's own units).
    """

    weights: Mapping[MetricKind, float]
    thresholds: Mapping[MetricKind, float] = field(default_factory=dict)
    combiner: str = "sum"

    def __post_init__(self) -> None:
        weights = {metric_kind(k): float(v) for k, v in dict(self.weights).items()}
        thresholds = {metric_kind(k): float(v) for k, v in dict(self.thresholds).items()}
        if not weights:
            raise ValueError("WeightConfig needs at least one weighted metric")
        for kind, w in weights.items():
            if not (0.0 <= w <= 1.0):
                raise ValueError(f"weight for {kind.value} must be in [0, 1], got {w}")
        total = sum(weights.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {total!r}")
        for kind in weights:
            t = thresholds.get(kind)
            if t is None or not (t > 0 and math.isfinite(t)):
                raise ValueError(f"metric {kind.value} needs a strictly positive threshold")
        if self.combiner not in ("sum", "product"):
            raise ValueError(f"combiner must be 'sum' or 'product', got {self.combiner!r}")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "thresholds", thresholds)

    @property
    def kinds(self) -> tuple[MetricKind, ...]:
        return tuple(self.weights)

    def restricted(self, group: MetricGroup) -> WeightConfig:
        """Keep only one metric group and renormalise the weights to sum to 1.

        If the group has no weight mass the surviving metrics share it equally.
        """
        kept = {k: w for k, w in self.weights.items() if k.group is group}
        if not kept:
            raise ValueError(f"no {group.value}-group metric in this config")
        total = sum(kept.values())
        if total > 0:
            weights = {k: w / total for k, w in kept.items()}
        else:
            weights = {k: 1.0 / len(kept) for k in kept}
        _fix_rounding(weights)
        return WeightConfig(weights, {k: self.thresholds[k] for k in kept}, self.combiner)

    def to_dict(self) -> dict[str, Any]:
        return {
            "weights": {k.value: v for k, v in self.weights.items()},
            "thresholds": {k.value: v for k, v in self.thresholds.items()},
            "combiner": self.combiner,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> WeightConfig:
        """Build from JSON; thresholds missing from ``data`` use the defaults."""
        weights = {metric_kind(k): v for k, v in data["weights"].items()}
        thresholds = {k: DEFAULT_THRESHOLDS[k] for k in weights}
        thresholds.update({metric_kind(k): v for k, v in data.get("thresholds", {}).items()})
        return cls(weights, thresholds, data.get("combiner", "sum"))


def _fix_rounding(weights: dict[MetricKind, float]) -> None:
    drift = 1.0 - sum(weights.values())
    if drift and weights:
        heaviest = max(weights, key=weights.__getitem__)
        weights[heaviest] = min(1.0, max(0.0, weights[heaviest] + drift))


@dataclass(frozen=True)
class RankingTable:
    """An ordered list of candidates, best first.

    ``scores`` are higher-is-better and non-increasing.  ``ties`` lists the
    index groups (size >= 2) whose scores are exactly equal; within a group
    candidates are ordered by id.
    """

    candidate_ids: tuple[str, ...]
    scores: tuple[float, ...]
    method: str
    ties: tuple[tuple[int, ...], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "candidate_ids", tuple(str(c) for c in self.candidate_ids))
        object.__setattr__(self, "scores", _floats(self.scores))
        object.__setattr__(self, "ties", tuple(tuple(int(i) for i in g) for g in self.ties))
        if len(self.candidate_ids) != len(self.scores):
            raise ValueError("candidate_ids and scores differ in length")
        if len(set(self.candidate_ids)) != len(self.candidate_ids):
            raise ValueError("duplicate candidate ids in ranking")
        if any(math.isnan(s) for s in self.scores):
            raise ValueError("ranking scores must not be NaN")
        if any(a < b for a, b in zip(self.scores, self.scores[1:])):
            raise ValueError("ranking scores must be non-increasing")
        n = len(self.candidate_ids)
        for group in self.ties:
            if len(group) < 2 or any(not 0 <= i < n for i in group):
                raise ValueError(f"invalid tie group {group}")

    @classmethod
    def from_scores(cls, scores: Mapping[str, float], method: str) -> RankingTable:
        """Sort by score descending (ties by id) and record exact-equal groups."""
        ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
        ids = tuple(k for k, _ in ordered)
        vals = tuple(float(v) for _, v in ordered)
        ties = []
        start = 0
        for i in range(1, len(vals) + 1):
            if i == len(vals) or vals[i] != vals[start]:
                if i - start > 1:
                    ties.append(tuple(range(start, i)))
                start = i
        return cls(ids, vals, method, tuple(ties))

    def __len__(self) -> int:
        return len(self.candidate_ids)

    def levels(self) -> dict[str, int]:
        """Map each candidate to its tie-aware rank level (0 = best)."""
        group_of = {}
        for g in self.ties:
            for i in g:
                group_of[i] = g[0]
        level = {}
        current = -1
        for i, cid in enumerate(self.candidate_ids):
            head = group_of.get(i, i)
            if head == i:
                current += 1
            level[cid] = current
        return level

    def ranks(self) -> list[int]:
        """Competition ranks (1-based; tied candidates share the best rank)."""
        levels = self.levels()
        first_pos: dict[int, int] = {}
        for i, cid in enumerate(self.candidate_ids):
            first_pos.setdefault(levels[cid], i + 1)
        return [first_pos[levels[cid]] for cid in self.candidate_ids]

    def with_method(self, method: str) -> RankingTable:
        return RankingTable(self.candidate_ids, self.scores, method, self.ties)

    def to_dict(self) -> dict[str, Any]:
        return {
            "candidate_ids": list(self.candidate_ids),
            "scores": list(self.scores),
            "method": self.method,
            "ties": [list(g) for g in self.ties],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RankingTable:
        return cls(
            candidate_ids=data["candidate_ids"],
            scores=data["scores"],
            method=data.get("method", ""),
            ties=data.get("ties", ()),
        )
