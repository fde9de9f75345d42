"""Metric computation: classification scores, carbon composite, normalisation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from hwrec.domain import (
    DEFAULT_THRESHOLDS,
    MetricGroup,
    MetricKind,
    WeightConfig,
    metric_kind,
)


class UndefinedMetricError(ValueError):
    """Raised when a metric has no defined value for the given input."""


@dataclass(frozen=True)
class MetricSample:
    kind: MetricKind
    value: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", metric_kind(self.kind))
        value = float(self.value)
        if not math.isfinite(value):
            raise ValueError(f"{self.kind.value} sample must be finite, got {value}")
        if value < 0 and self.kind is not MetricKind.CPU_TEMP_C:
            raise ValueError(f"{self.kind.value} sample must be non-negative, got {value}")
        object.__setattr__(self, "value", value)


@dataclass(frozen=True)
class ClassificationScores:
    accuracy: float
    precision: float
    recall: float
    f1: float
    # classes whose precision (no predictions) or recall (no support) was
    # undefined and counted as 0 in the macro average
    zero_division: tuple[str, ...] = ()

    def as_metrics(self) -> dict[MetricKind, float]:
        return {
            MetricKind.ACCURACY: self.accuracy,
            MetricKind.PRECISION: self.precision,
            MetricKind.RECALL: self.recall,
            MetricKind.F1: self.f1,
        }


def harmonic_mean(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def classification_metrics(confusion: Any) -> ClassificationScores:
    """Accuracy and macro-averaged precision/recall/F1 from a confusion matrix.

    Rows are actual classes, columns predicted classes.  F1 is the harmonic
    mean of the macro precision and macro recall.
    """
    cm = np.asarray(confusion)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.shape[0] < 1:
        raise ValueError(f"confusion matrix must be square KxK, got shape {cm.shape}")
    if not np.issubdtype(cm.dtype, np.integer):
        if not np.all(np.isfinite(cm)) or np.any(cm != np.round(cm)):
            raise ValueError("confusion matrix entries must be integers")
        cm = cm.astype(np.int64)
    if np.any(cm < 0):
        raise ValueError("confusion matrix entries must be >= 0")
    total = int(cm.sum())
    if total == 0:
        raise UndefinedMetricError("confusion matrix is all zeros")

    tp = np.diag(cm).astype(float)
    predicted = cm.sum(axis=0).astype(float)
    actual = cm.sum(axis=1).astype(float)

    flagged = []
    per_precision = np.zeros(len(tp))
    per_recall = np.zeros(len(tp))
    for k in range(len(tp)):
        if predicted[k] > 0:
            per_precision[k] = tp[k] / predicted[k]
        else:
            flagged.append(f"precision:{k}")
        if actual[k] > 0:
            per_recall[k] = tp[k] / actual[k]
        else:
            flagged.append(f"recall:{k}")

    precision = float(per_precision.mean())
    recall = float(per_recall.mean())
    return ClassificationScores(
        accuracy=float(tp.sum() / total),
        precision=precision,
        recall=recall,
        f1=harmonic_mean(precision, recall),
        zero_division=tuple(flagged),
    )


@dataclass(frozen=True)
class CompositeSpec:
    """Linear carbon-footprint composite over Hardware-group metrics."""

    coefficients: Mapping[MetricKind, float] = field(default_factory=dict)
    offset: float = 0.0

    def __post_init__(self) -> None:
        coefficients = {metric_kind(k): float(v) for k, v in dict(self.coefficients).items()}
        for kind in coefficients:
            if kind.group is not MetricGroup.HARDWARE:
                raise ValueError(f"composite may only reference Hardware metrics, not {kind.value}")
            if kind is MetricKind.CARBON_FOOTPRINT:
                raise ValueError("composite cannot reference its own output")
        object.__setattr__(self, "coefficients", coefficients)
        object.__setattr__(self, "offset", float(self.offset))

    def to_dict(self) -> dict[str, Any]:
        return {
            "coefficients": {k.value: v for k, v in self.coefficients.items()},
            "offset": self.offset,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> CompositeSpec:
        return cls(data.get("coefficients", {}), data.get("offset", 0.0))


# Illustrative weighting only; replace with a published formula if one is available.
DEFAULT_COMPOSITE = CompositeSpec(
    coefficients={
        MetricKind.POWER_W: 1.0,
        MetricKind.EXECUTION_TIME_MS: 0.001,
        MetricKind.MEMORY_MB: 0.001,
        MetricKind.CPU_TEMP_C: 0.0,
    },
    offset=0.0,
)


def carbon_footprint(metrics: Mapping[MetricKind | str, float], spec: CompositeSpec = DEFAULT_COMPOSITE) -> float:
    values = {metric_kind(k): float(v) for k, v in metrics.items()}
    total = spec.offset
    for kind, coef in spec.coefficients.items():
        if kind not in values:
            raise KeyError(f"carbon footprint needs metric {kind.value!r}")
        total += coef * values[kind]
    return total


def normalize(kind: MetricKind | str, value: float, threshold: float) -> float:
    """Express ``value`` as a fraction of its budget ``threshold``."""
    metric_kind(kind)
    if not threshold > 0:
        raise ValueError(f"threshold must be > 0, got {threshold}")
    return value / threshold


# Temperature is deliberately absent: it gates stabilisation, it is not a quality signal.
DEFAULT_WEIGHTS: dict[MetricKind, float] = {
    MetricKind.EXECUTION_TIME_MS: 0.3,
    MetricKind.MEMORY_MB: 0.1,
    MetricKind.POWER_W: 0.1,
    MetricKind.CARBON_FOOTPRINT: 0.1,
    MetricKind.ACCURACY: 0.4,
}

PRESETS: dict[str, dict[MetricKind, float]] = {
    "balanced": DEFAULT_WEIGHTS,
    "speed": {
        MetricKind.EXECUTION_TIME_MS: 0.7,
        MetricKind.MEMORY_MB: 0.05,
        MetricKind.POWER_W: 0.05,
        MetricKind.ACCURACY: 0.2,
    },
    "energy": {
        MetricKind.POWER_W: 0.5,
        MetricKind.CARBON_FOOTPRINT: 0.25,
        MetricKind.EXECUTION_TIME_MS: 0.05,
        MetricKind.ACCURACY: 0.2,
    },
    "accuracy": {
        MetricKind.ACCURACY: 0.8,
        MetricKind.EXECUTION_TIME_MS: 0.1,
        MetricKind.MEMORY_MB: 0.1,
    },
}


def weight_config(
    weights: Mapping[MetricKind | str, float] | None = None,
    thresholds: Mapping[MetricKind | str, float] | None = None,
    combiner: str = "sum",
) -> WeightConfig:
    """Build a :class:`WeightConfig`, filling unspecified thresholds with defaults."""
    w = {metric_kind(k): float(v) for k, v in (weights or DEFAULT_WEIGHTS).items()}
    t = {k: DEFAULT_THRESHOLDS[k] for k in w}
    t.update({metric_kind(k): float(v) for k, v in (thresholds or {}).items()})
    return WeightConfig(w, t, combiner)


def preset_config(name: str) -> WeightConfig:
    try:
        return weight_config(PRESETS[name])
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
