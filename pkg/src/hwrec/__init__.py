"""Hardware-aware pre-trained model recommendation.

Benchmarks (model, dataset) workloads on devices, aggregates the measured
metrics into tunable rankings with weighted Copeland voting, and trains
token/similarity recommenders (Fusion and Shadow variants) that predict
those rankings without benchmarking every candidate.
"""

from hwrec.domain import (
    BenchmarkRecord,
    HardwareProfile,
    MetricDirection,
    MetricGroup,
    MetricKind,
    ModelCard,
    Phase,
    RankingTable,
    TaskDescriptor,
    WeightConfig,
    validate_registry,
)

__version__ = "0.1.0"

__all__ = [
    "BenchmarkRecord",
    "HardwareProfile",
    "MetricDirection",
    "MetricGroup",
    "MetricKind",
    "ModelCard",
    "Phase",
    "RankingTable",
    "TaskDescriptor",
    "WeightConfig",
    "validate_registry",
    "__version__",
]
