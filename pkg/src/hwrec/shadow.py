"""Independent selectors combined by Copeland voting.

A task selector ranks candidates with a task-only scorer, a hardware selector
with a scorer whose query token is built from hardware features alone.  Any
further selector (energy, cost, ...) is just another :class:`SelectorOutput`;
:func:`combine_selectors` treats each output as one ordinal voter.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

from hwrec.domain import HardwareProfile, MetricKind, ModelCard, RankingTable, TaskDescriptor, WeightConfig
from hwrec.fusion import ScorerParams, UntrainedScorerError, score_candidates
from hwrec.ranking import Aggregates, RankingError, copeland, rank_by_copeland, ranking_to_csv


class SelectorKind(str, Enum):
    TASK = "Task"
    HARDWARE = "Hardware"
    ENERGY = "Energy"
    COST = "Cost"


@dataclass(frozen=True)
class SelectorOutput:
    selector: SelectorKind
    table: RankingTable

    def __post_init__(self) -> None:
        object.__setattr__(self, "selector", SelectorKind(self.selector))


def _check_scorer(params: ScorerParams, mode: str) -> None:
    if not params.trained:
        raise UntrainedScorerError(f"{mode} selector needs trained scorer parameters")
    if params.mode != mode:
        raise ValueError(f"{mode} selector needs a {mode!r} scorer, got {params.mode!r}")


def task_selector(task: TaskDescriptor, candidates: Sequence[ModelCard], params: ScorerParams) -> SelectorOutput:
    _check_scorer(params, "task")
    if not candidates:
        raise ValueError("no candidates to rank")
    scores = score_candidates(task, None, candidates, params)
    return SelectorOutput(SelectorKind.TASK, RankingTable.from_scores(scores, "selector:task"))


def hardware_selector(hw: HardwareProfile, candidates: Sequence[ModelCard], params: ScorerParams) -> SelectorOutput:
    _check_scorer(params, "hardware")
    if not candidates:
        raise ValueError("no candidates to rank")
    scores = score_candidates(None, hw, candidates, params)
    return SelectorOutput(SelectorKind.HARDWARE, RankingTable.from_scores(scores, "selector:hardware"))


def energy_selector(aggregates: Aggregates | Mapping[str, Mapping[MetricKind, float]]) -> SelectorOutput:
    """Rank by measured power draw alone (lowest first)."""
    config = WeightConfig({MetricKind.POWER_W: 1.0}, {MetricKind.POWER_W: 1.0})
    table = rank_by_copeland(aggregates, config).with_method("selector:energy")
    return SelectorOutput(SelectorKind.ENERGY, table)


def combine_selectors(
    outputs: Sequence[SelectorOutput],
    selector_weights: Mapping[SelectorKind | str, float] | None = None,
) -> RankingTable:
    """Weighted Copeland with one voter per selector; weights are normalised to sum 1."""
    if len(outputs) < 2:
        raise RankingError("combining needs at least two selector outputs")
    kinds = [o.selector for o in outputs]
    if len(set(kinds)) != len(kinds):
        raise RankingError("each selector may vote only once")
    if selector_weights is None:
        raw = [1.0] * len(outputs)
    else:
        given = {SelectorKind(k): float(v) for k, v in selector_weights.items()}
        unknown = set(given) - set(kinds)
        if unknown:
            raise RankingError(f"weights given for absent selectors {sorted(k.value for k in unknown)}")
        raw = [given.get(k, 0.0) for k in kinds]
    if any(w < 0 or not math.isfinite(w) for w in raw):
        raise RankingError("selector weights must be finite and >= 0")
    total = math.fsum(raw)
    if total <= 0:
        raise RankingError("selector weights sum to zero")
    reference = set(outputs[0].table.candidate_ids)
    for o in outputs[1:]:
        if set(o.table.candidate_ids) != reference:
            raise RankingError(f"{o.selector.value} selector ranks a different candidate set")
    return copeland([o.table for o in outputs], [w / total for w in raw], "shadow")


def shadow_to_json(combined: RankingTable, outputs: Sequence[SelectorOutput]) -> str:
    payload = combined.to_dict()
    payload["ranks"] = combined.ranks()
    payload["selectors"] = {o.selector.value: o.table.to_dict() for o in outputs}
    return json.dumps(payload, indent=2)


def shadow_to_csv(combined: RankingTable, outputs: Sequence[SelectorOutput]) -> str:
    """Combined table followed by one block per selector, separated by blank lines."""
    blocks = [ranking_to_csv(combined)] + [ranking_to_csv(o.table) for o in outputs]
    return "\n".join(blocks)
