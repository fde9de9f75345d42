"""Rankings from benchmark data.

Per-metric rankings are combined with weighted Copeland voting: each metric
ranking is a voter carrying weight ``w_i``; candidate ``a`` beats ``b`` when
the weight of voters strictly preferring ``a`` exceeds the weight preferring
``b``.  The Copeland score is ``wins + 0.5 * pairwise_ties``.

The multiplicative objective scores a candidate as

    f * sum_i r_i ** w_i      (or prod_i r_i ** w_i with ``combiner="product"``)

where ``r_i = HW_i / T_i`` for higher-is-better hardware metrics and
``r_i = T_i / HW_i`` for lower-is-better ones, so that every term rewards
improvement.
"""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from hwrec.domain import (
    BenchmarkRecord,
    MetricGroup,
    MetricKind,
    Phase,
    RankingTable,
    WeightConfig,
    metric_kind,
)
from hwrec.metrics import normalize

# Pairwise tallies closer than this are treated as ties, so float summation
# order cannot decide a vote.
TALLY_TIE_TOL = 1e-12


class RankingError(ValueError):
    pass


@dataclass(frozen=True)
class MetricRanking:
    kind: MetricKind
    table: RankingTable


@dataclass(frozen=True)
class GroundTruthRanking:
    """Reference ranking for one (task, hardware) scope, built by weighted Copeland."""

    task_id: str
    hardware_id: str
    table: RankingTable

    def __post_init__(self) -> None:
        if self.table.method != "ground_truth":
            object.__setattr__(self, "table", self.table.with_method("ground_truth"))


@dataclass
class Aggregates:
    """Per-model aggregated metric values for one (task, hardware) scope."""

    values: dict[str, dict[MetricKind, float]]
    warnings: list[str] = field(default_factory=list)

    def __getitem__(self, model_id: str) -> dict[MetricKind, float]:
        return self.values[model_id]

    def __iter__(self):
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)


def aggregate_records(
    records: Iterable[BenchmarkRecord],
    scope: tuple[str, str],
    statistic: str = "mean",
) -> Aggregates:
    """Aggregate fixed-batch records per model.

    Sweep records are diagnostics and are ignored.  Models that only have
    sweep records are excluded and named in ``warnings``.
    """
    if statistic not in ("mean", "median"):
        raise ValueError(f"statistic must be 'mean' or 'median', got {statistic!r}")
    task_id, hardware_id = scope
    reducer = statistics.fmean if statistic == "mean" else statistics.median

    samples: dict[str, dict[MetricKind, list[float]]] = {}
    seen: list[str] = []
    for rec in records:
        if rec.task_id != task_id or rec.hardware_id != hardware_id:
            raise RankingError(
                f"record for ({rec.task_id}, {rec.hardware_id}) outside scope ({task_id}, {hardware_id})"
            )
        if rec.model_id not in seen:
            seen.append(rec.model_id)
        if rec.phase is not Phase.FIXED_BATCH:
            continue
        per_metric = samples.setdefault(rec.model_id, {})
        for kind, value in rec.metrics.items():
            per_metric.setdefault(kind, []).append(value)

    out = Aggregates({})
    for model_id in seen:
        if model_id not in samples:
            out.warnings.append(f"model {model_id} has no FixedBatch records; excluded")
            continue
        out.values[model_id] = {k: float(reducer(v)) for k, v in samples[model_id].items()}
    return out


def _values(aggregates: Aggregates | Mapping[str, Mapping[MetricKind, float]]) -> Mapping[str, Mapping]:
    return aggregates.values if isinstance(aggregates, Aggregates) else aggregates


def rank_by_metric(
    aggregates: Aggregates | Mapping[str, Mapping[MetricKind, float]],
    kind: MetricKind | str,
) -> MetricRanking:
    """Rank candidates by one metric, best first per the metric's direction.

    Table scores are the metric values negated for lower-is-better metrics so
    that scores stay non-increasing.
    """
    kind = metric_kind(kind)
    values = _values(aggregates)
    if not values:
        raise RankingError("no candidates to rank")
    sign = -1.0 if kind.lower_is_better else 1.0
    scores = {}
    for model_id, metrics in values.items():
        value = {metric_kind(k): v for k, v in metrics.items()}.get(kind)
        if value is None:
            raise RankingError(f"model {model_id} has no value for metric {kind.value}")
        scores[model_id] = sign * value
    return MetricRanking(kind, RankingTable.from_scores(scores, f"metric:{kind.value}"))


@dataclass(frozen=True)
class PairwiseTally:
    """``wins[a, b]`` is the total weight of voters ranking a strictly above b."""

    candidates: tuple[str, ...]
    wins: np.ndarray


def pairwise_tally(tables: Sequence[RankingTable], weights: Sequence[float]) -> PairwiseTally:
    candidates = tuple(sorted(tables[0].candidate_ids))
    n = len(candidates)
    wins = np.zeros((n, n))
    for table, w in zip(tables, weights):
        levels = table.levels()
        lv = np.array([levels[c] for c in candidates])
        wins += w * (lv[:, None] < lv[None, :])
    return PairwiseTally(candidates, wins)


def copeland(tables: Sequence[RankingTable], weights: Sequence[float], method: str = "copeland") -> RankingTable:
    """Weighted Copeland over arbitrary voter tables sharing one candidate set."""
    if not tables:
        raise RankingError("need at least one ranking to aggregate")
    if len(tables) != len(weights):
        raise RankingError("one weight per ranking is required")
    reference = set(tables[0].candidate_ids)
    for t in tables[1:]:
        if set(t.candidate_ids) != reference:
            raise RankingError("rankings cover different candidate sets")
    tally = pairwise_tally(tables, weights)
    margin = tally.wins - tally.wins.T
    beats = margin > TALLY_TIE_TOL
    tied = np.abs(margin) <= TALLY_TIE_TOL
    np.fill_diagonal(tied, False)
    scores = beats.sum(axis=1) + 0.5 * tied.sum(axis=1)
    return RankingTable.from_scores(dict(zip(tally.candidates, scores.tolist())), method)


def weighted_copeland(rankings: Sequence[MetricRanking], config: WeightConfig) -> RankingTable:
    kinds = [r.kind for r in rankings]
    if len(set(kinds)) != len(kinds):
        raise RankingError("each metric may vote only once")
    if set(kinds) != set(config.weights):
        raise RankingError(
            "weight config covers "
            f"{sorted(k.value for k in config.weights)} but rankings cover {sorted(k.value for k in kinds)}"
        )
    return copeland([r.table for r in rankings], [config.weights[k] for k in kinds], "copeland")


def rank_by_copeland(aggregates: Aggregates | Mapping, config: WeightConfig) -> RankingTable:
    """Shorthand for rank_by_metric over every weighted metric, then weighted_copeland."""
    return weighted_copeland([rank_by_metric(aggregates, k) for k in config.weights], config)


def objective_score(f_alpha: float, hw_metrics: Mapping[MetricKind | str, float], config: WeightConfig) -> float:
    """Performance times the combined threshold-normalised hardware ratios.

    Every Hardware-group metric named in ``config.weights`` contributes a term
    (zero-weight metrics contribute ``1``).  With no hardware metric in the
    config the hardware factor is 1 and the score is ``f_alpha`` alone.
    """
    if not f_alpha >= 0:
        raise ValueError(f"f_alpha must be >= 0, got {f_alpha}")
    values = {metric_kind(k): float(v) for k, v in hw_metrics.items()}
    terms = []
    for kind, w in config.weights.items():
        if kind.group is not MetricGroup.HARDWARE:
            continue
        if kind not in values:
            raise RankingError(f"hardware metric {kind.value} missing")
        threshold = config.thresholds.get(kind)
        if threshold is None:
            raise RankingError(f"no threshold for {kind.value}")
        ratio = normalize(kind, values[kind], threshold)
        if kind.lower_is_better:
            if ratio <= 0:
                raise RankingError(f"{kind.value} must be > 0 for a lower-is-better ratio, got {values[kind]}")
            ratio = 1.0 / ratio
        terms.append(ratio**w)
    if not terms:
        return float(f_alpha)
    combined = math.fsum(terms) if config.combiner == "sum" else math.prod(terms)
    return float(f_alpha) * combined


def objective_candidates(
    aggregates: Aggregates | Mapping[str, Mapping[MetricKind, float]],
    performance: MetricKind = MetricKind.ACCURACY,
) -> dict[str, tuple[float, dict[MetricKind, float]]]:
    """Split aggregates into ``(f_alpha, hw_metrics)`` pairs for :func:`rank_by_objective`."""
    out = {}
    for model_id, metrics in _values(aggregates).items():
        metrics = {metric_kind(k): v for k, v in metrics.items()}
        if performance not in metrics:
            raise RankingError(f"model {model_id} has no {performance.value}")
        hw = {k: v for k, v in metrics.items() if k.group is MetricGroup.HARDWARE}
        out[model_id] = (metrics[performance], hw)
    return out


def rank_by_objective(
    candidates: Mapping[str, tuple[float, Mapping[MetricKind, float]]],
    config: WeightConfig,
) -> RankingTable:
    if not candidates:
        raise RankingError("no candidates to rank")
    scores = {}
    for model_id, (f_alpha, hw) in candidates.items():
        try:
            scores[model_id] = objective_score(f_alpha, hw, config)
        except (RankingError, ValueError) as exc:
            raise RankingError(f"{model_id}: {exc}") from exc
    return RankingTable.from_scores(scores, "objective")


def kendall_tau(a: RankingTable, b: RankingTable) -> float:
    """Tie-corrected Kendall tau-b between two rankings of the same candidates.

    Returns NaN when undefined (fewer than two candidates, or one side fully tied).
    """
    if set(a.candidate_ids) != set(b.candidate_ids):
        raise RankingError("rankings cover different candidate sets")
    if len(a) < 2:
        return float("nan")
    la, lb = a.levels(), b.levels()
    ids = sorted(la)
    x = [la[c] for c in ids]
    y = [lb[c] for c in ids]
    if len(set(x)) < 2 or len(set(y)) < 2:
        return float("nan")
    tau = stats.kendalltau(x, y, variant="b").statistic
    return float(min(1.0, max(-1.0, tau)))


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

CSV_HEADER = ("rank", "model_id", "score", "method")


def ranking_to_csv(table: RankingTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for rank, cid, score in zip(table.ranks(), table.candidate_ids, table.scores):
        writer.writerow((rank, cid, repr(score), table.method))
    return buf.getvalue()


def ranking_from_csv(text: str) -> RankingTable:
    rows = list(csv.DictReader(io.StringIO(text)))
    scores = {row["model_id"]: float(row["score"]) for row in rows}
    method = rows[0]["method"] if rows else ""
    return RankingTable.from_scores(scores, method)


def ranking_to_json(table: RankingTable, **extra) -> str:
    payload = table.to_dict()
    payload["ranks"] = table.ranks()
    payload.update(extra)
    return json.dumps(payload, indent=2)


def format_table(table: RankingTable) -> str:
    """Aligned plain-text rendering for terminals."""
    rows = [("rank", "model_id", "score")]
    rows += [(str(r), c, f"{s:.6g}") for r, c, s in zip(table.ranks(), table.candidate_ids, table.scores)]
    widths = [max(len(row[i]) for row in rows) for i in range(3)]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    footer = f"method: {table.method}"
    if table.ties:
        groups = ["{" + ", ".join(table.candidate_ids[i] for i in g) + "}" for g in table.ties]
        footer += "; ties: " + " ".join(groups)
    return "\n".join(lines + [footer])
