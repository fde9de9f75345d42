"""Token/similarity recommender with optional hardware awareness.

A model card is embedded as a token ``theta = W_model @ x``.  A task is
embedded as ``mu = W_task @ t`` and, in fusion mode, the hardware profile is
folded in through its own extractor:

    add:    mu = W_task @ t + W_hw @ h
    concat: mu = [W_task @ t ; W_hw @ h]

The similarity is a multi-head bilinear attention score

    sim(theta, mu) = sum_h a_h * (Q_h @ mu) . (K_h @ theta) / sqrt(d)

and every matrix is trained with a pairwise hinge ranking loss by plain
gradient descent using hand-derived gradients.  For the top-K candidates of a
first pass, tokens can be refined as ``theta* = theta + W_refine @ r`` where
``r`` holds benchmark-derived per-model statistics.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from hwrec.domain import HardwareProfile, MetricKind, ModelCard, RankingTable, TaskDescriptor
from hwrec.ranking import Aggregates, GroundTruthRanking

FORMAT = "hwrec-scorer"
FORMAT_VERSION = 1
MODES = ("fusion", "task", "hardware")

__all__ = [
    "GroundTruthRanking",
    "ModelToken",
    "ScorerParams",
    "TaskToken",
    "TrainHyper",
    "TrainingExample",
    "TrainResult",
    "extract_model_token",
    "extract_task_token",
    "init_params",
    "ranking_loss",
    "recommend_fusion",
    "similarity",
    "train_scorer",
]


class DimensionError(ValueError):
    pass


class UntrainedScorerError(RuntimeError):
    pass


class TrainingDivergedError(FloatingPointError):
    def __init__(self, lr: float, epoch: int, loss: float):
        super().__init__(f"ranking loss became {loss} at epoch {epoch} (lr={lr}); lower the learning rate")
        self.lr = lr
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class ModelToken:
    model_id: str
    vector: np.ndarray


@dataclass(frozen=True)
class TaskToken:
    task_id: str | None
    vector: np.ndarray
    hardware_id: str | None = None


@dataclass
class ScorerParams:
    """Trainable parameters of one scorer.

    ``W_task`` is ``None`` for a hardware-only scorer and ``W_hw`` is ``None``
    for a task-only scorer.  ``Q`` has shape ``(heads, d, d_mu)`` and ``K``
    ``(heads, d, d)``.
    """

    W_model: np.ndarray
    W_task: np.ndarray | None
    W_hw: np.ndarray | None
    Q: np.ndarray
    K: np.ndarray
    output_weights: np.ndarray
    W_refine: np.ndarray | None = None
    mode: str = "fusion"
    fusion_mode: str = "add"
    trained: bool = False

    MATRICES = ("W_model", "W_task", "W_hw", "Q", "K", "output_weights", "W_refine")

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.fusion_mode not in ("add", "concat"):
            raise ValueError(f"fusion_mode must be 'add' or 'concat', got {self.fusion_mode!r}")
        if (self.W_task is None) != (self.mode == "hardware") or (self.W_hw is None) != (self.mode == "task"):
            raise DimensionError(f"mode {self.mode!r} does not match the extractor matrices supplied")
        d = self.d
        if self.K.shape != (self.heads, d, d) or self.Q.shape[:2] != (self.heads, d):
            raise DimensionError("attention projections inconsistent with token dimension")
        if self.Q.shape[2] != self.mu_dim:
            raise DimensionError(f"Q expects task tokens of size {self.Q.shape[2]}, extractors give {self.mu_dim}")
        if self.output_weights.shape != (self.heads,):
            raise DimensionError("one output weight per head is required")
        for name in ("W_task", "W_hw", "W_refine"):
            m = getattr(self, name)
            if m is not None and m.shape[0] != d:
                raise DimensionError(f"{name} must map into {d} dimensions")
        for name, m in self.arrays().items():
            if not np.all(np.isfinite(m)):
                raise ValueError(f"{name} contains non-finite values")

    @property
    def d(self) -> int:
        return self.W_model.shape[0]

    @property
    def heads(self) -> int:
        return self.K.shape[0]

    @property
    def mu_dim(self) -> int:
        if self.mode == "fusion" and self.fusion_mode == "concat":
            return 2 * self.d
        return self.d

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.MATRICES if getattr(self, k) is not None}

    def copy(self) -> ScorerParams:
        kw = {k: (None if getattr(self, k) is None else getattr(self, k).copy()) for k in self.MATRICES}
        return ScorerParams(**kw, mode=self.mode, fusion_mode=self.fusion_mode, trained=self.trained)

    # -- serialisation -------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "mode": self.mode,
            "fusion_mode": self.fusion_mode,
            "trained": self.trained,
            "dims": {
                "d": self.d,
                "heads": self.heads,
                "mu": self.mu_dim,
                "model": self.W_model.shape[1],
                "task": None if self.W_task is None else self.W_task.shape[1],
                "hw": None if self.W_hw is None else self.W_hw.shape[1],
                "refine": None if self.W_refine is None else self.W_refine.shape[1],
            },
            # nested lists are row-major
            "matrices": {k: v.tolist() for k, v in self.arrays().items()},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ScorerParams:
        if data.get("format") != FORMAT:
            raise ValueError("not a scorer artifact")
        if data.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported scorer version {data.get('version')}")
        mats = data["matrices"]
        arrays = {k: (np.asarray(mats[k], dtype=float) if k in mats else None) for k in cls.MATRICES}
        params = cls(
            **arrays,
            mode=data["mode"],
            fusion_mode=data.get("fusion_mode", "add"),
            trained=bool(data.get("trained", False)),
        )
        dims = data.get("dims", {})
        if dims and (dims.get("d") != params.d or dims.get("heads") != params.heads):
            raise DimensionError("dimension header disagrees with stored matrices")
        return params

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> ScorerParams:
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_params(
    model_dim: int,
    task_dim: int | None,
    hw_dim: int | None,
    d: int = 8,
    heads: int = 2,
    mode: str = "fusion",
    fusion_mode: str = "add",
    refine_dim: int | None = None,
    seed: int = 0,
) -> ScorerParams:
    """Parameters drawn uniformly from [-1/sqrt(d), 1/sqrt(d)]; head weights start at 1/heads."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(d)

    def draw(*shape):
        return rng.uniform(-bound, bound, size=shape)

    use_task = mode in ("fusion", "task")
    use_hw = mode in ("fusion", "hardware")
    if use_task and task_dim is None:
        raise DimensionError(f"mode {mode!r} needs a task feature dimension")
    if use_hw and hw_dim is None:
        raise DimensionError(f"mode {mode!r} needs a hardware feature dimension")
    mu_dim = 2 * d if (mode == "fusion" and fusion_mode == "concat") else d
    W_model = draw(d, model_dim)
    W_task = draw(d, task_dim) if use_task else None
    W_hw = draw(d, hw_dim) if use_hw else None
    Q = draw(heads, d, mu_dim)
    K = draw(heads, d, d)
    W_refine = draw(d, refine_dim) if refine_dim else None
    return ScorerParams(
        W_model, W_task, W_hw, Q, K, np.full(heads, 1.0 / heads), W_refine, mode=mode, fusion_mode=fusion_mode
    )


# ---------------------------------------------------------------------------
# Tokens and similarity
# ---------------------------------------------------------------------------


def _vec(values: Sequence[float], expected: int, what: str) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.shape != (expected,):
        raise DimensionError(f"{what} has dimension {v.shape[0] if v.ndim == 1 else v.shape}, expected {expected}")
    return v


def extract_model_token(card: ModelCard, params: ScorerParams) -> ModelToken:
    x = _vec(card.model_features, params.W_model.shape[1], f"model {card.id} features")
    return ModelToken(card.id, params.W_model @ x)


def _task_inputs(task, hw, params: ScorerParams) -> tuple[np.ndarray | None, np.ndarray | None]:
    t = h = None
    if params.W_task is not None:
        if task is None:
            raise DimensionError(f"a {params.mode} scorer needs a task")
        t = _vec(task.task_features, params.W_task.shape[1], f"task {task.id} features")
    if params.W_hw is not None and hw is not None:
        h = _vec(hw.hw_features, params.W_hw.shape[1], f"hardware {hw.id} features")
    if params.mode == "hardware" and h is None:
        raise DimensionError("a hardware scorer needs a hardware profile")
    return t, h


def _mu(t: np.ndarray | None, h: np.ndarray | None, params: ScorerParams) -> np.ndarray:
    d = params.d
    task_part = params.W_task @ t if t is not None else np.zeros(d)
    hw_part = params.W_hw @ h if h is not None else np.zeros(d)
    if params.mode == "fusion" and params.fusion_mode == "concat":
        return np.concatenate([task_part, hw_part])
    return task_part + hw_part


def extract_task_token(
    task: TaskDescriptor | None, hw: HardwareProfile | None, params: ScorerParams
) -> TaskToken:
    """Task token, augmented with the hardware embedding when ``hw`` is given."""
    t, h = _task_inputs(task, hw, params)
    return TaskToken(task.id if task else None, _mu(t, h, params), hw.id if hw else None)


def _head_vectors(mu: np.ndarray, params: ScorerParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-head query ``q_h = Q_h mu`` and the combined score direction ``c``."""
    q = params.Q @ mu  # (H, d)
    keyed = np.einsum("hij,hi->hj", params.K, q)  # K_h^T q_h
    c = params.output_weights @ keyed / math.sqrt(params.d)
    return q, c


def similarity(theta: ModelToken, mu: TaskToken, params: ScorerParams) -> float:
    th = np.asarray(theta.vector, dtype=float)
    m = np.asarray(mu.vector, dtype=float)
    if th.shape != (params.d,):
        raise DimensionError(f"model token has dimension {th.shape}, scorer uses {params.d}")
    if m.shape != (params.mu_dim,):
        raise DimensionError(f"task token has dimension {m.shape}, scorer uses {params.mu_dim}")
    _, c = _head_vectors(m, params)
    return float(th @ c)


# ---------------------------------------------------------------------------
# Loss and gradients
# ---------------------------------------------------------------------------


def truth_pairs(order: Sequence[str], truth: RankingTable) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs (i, j) into ``order`` where the truth ranks i strictly above j."""
    levels = truth.levels()
    missing = [c for c in order if c not in levels]
    if missing:
        raise ValueError(f"ground truth does not rank candidates {missing}")
    lv = np.array([levels[c] for c in order])
    ii, jj = np.nonzero(lv[:, None] < lv[None, :])
    return ii, jj


@dataclass
class TrainingExample:
    """One (task, hardware) query with its candidates and reference ranking."""

    task: TaskDescriptor | None
    hardware: HardwareProfile | None
    candidates: Sequence[ModelCard]
    truth: RankingTable | GroundTruthRanking
    refine: Mapping[str, Sequence[float]] | None = None

    def truth_table(self) -> RankingTable:
        return self.truth.table if isinstance(self.truth, GroundTruthRanking) else self.truth


@dataclass
class _Prepared:
    t: np.ndarray | None
    h: np.ndarray | None
    X: np.ndarray
    R: np.ndarray | None
    ii: np.ndarray
    jj: np.ndarray
    levels: np.ndarray


def _prepare(example: TrainingExample, params: ScorerParams) -> _Prepared:
    t, h = _task_inputs(example.task, example.hardware, params)
    ids = [c.id for c in example.candidates]
    X = np.array([_vec(c.model_features, params.W_model.shape[1], f"model {c.id} features")
                  for c in example.candidates])
    R = None
    if example.refine is not None and params.W_refine is not None:
        R = np.array([_vec(example.refine[c], params.W_refine.shape[1], f"refinement for {c}") for c in ids])
    table = example.truth_table()
    ii, jj = truth_pairs(ids, table)
    lv = table.levels()
    return _Prepared(t, h, X, R, ii, jj, np.array([lv[c] for c in ids]))


def _forward_backward(
    ex: _Prepared, params: ScorerParams, margin: float, scale: float, grads: dict[str, np.ndarray] | None
) -> tuple[float, list[np.ndarray]]:
    """Hinge loss for one example (both passes when refinement data is present).

    Adds ``scale``-weighted gradients into ``grads`` when it is given and
    returns the loss and the score vectors of each pass.
    """
    sqrt_d = math.sqrt(params.d)
    mu = _mu(ex.t, ex.h, params)
    q, c = _head_vectors(mu, params)
    Theta = ex.X @ params.W_model.T
    passes = [(Theta, None)]
    if ex.R is not None:
        passes.append((Theta + ex.R @ params.W_refine.T, ex.R))

    loss = 0.0
    all_scores = []
    g_mu = np.zeros_like(mu)
    for Th, R in passes:
        s = Th @ c
        all_scores.append(s)
        if not np.all(np.isfinite(s)):
            return math.nan, all_scores
        hinge = margin - (s[ex.ii] - s[ex.jj])
        active = hinge > 0
        loss += float(hinge[active].sum())
        if grads is None or not active.any():
            continue
        g = np.zeros(len(s))
        np.subtract.at(g, ex.ii[active], 1.0)
        np.add.at(g, ex.jj[active], 1.0)
        g *= scale
        theta_bar = Th.T @ g  # sum_n g_n theta_n
        k_theta = params.K @ theta_bar  # (H, d): K_h theta_bar
        grads["output_weights"] += (q * k_theta).sum(axis=1) / sqrt_d
        grads["K"] += params.output_weights[:, None, None] * np.einsum("hi,j->hij", q, theta_bar) / sqrt_d
        grads["Q"] += params.output_weights[:, None, None] * np.einsum("hi,j->hij", k_theta, mu) / sqrt_d
        g_mu += np.einsum("h,hij,hi->j", params.output_weights, params.Q, k_theta) / sqrt_d
        grads["W_model"] += np.outer(c, ex.X.T @ g)
        if R is not None:
            grads["W_refine"] += np.outer(c, R.T @ g)

    if grads is not None and g_mu.any():
        d = params.d
        if params.mode == "fusion" and params.fusion_mode == "concat":
            g_task, g_hw = g_mu[:d], g_mu[d:]
        else:
            g_task = g_hw = g_mu
        if ex.t is not None:
            grads["W_task"] += np.outer(g_task, ex.t)
        if ex.h is not None:
            grads["W_hw"] += np.outer(g_hw, ex.h)
    return loss, all_scores


def _pair_count(prepared: Sequence[_Prepared]) -> int:
    return sum(len(p.ii) * (2 if p.R is not None else 1) for p in prepared)


def ranking_loss(
    examples: Sequence[TrainingExample], params: ScorerParams, margin: float = 1.0, with_grad: bool = True
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean pairwise hinge loss over every ground-truth-ordered pair, and its gradients."""
    prepared = [_prepare(e, params) for e in examples]
    return _loss_and_grad(prepared, params, margin, with_grad)


def _loss_and_grad(prepared, params, margin, with_grad=True):
    n_pairs = max(1, _pair_count(prepared))
    grads = {k: np.zeros_like(v) for k, v in params.arrays().items()} if with_grad else None
    total = 0.0
    for ex in prepared:
        loss, _ = _forward_backward(ex, params, margin, 1.0 / n_pairs, grads)
        total += loss
    return total / n_pairs, (grads or {})


def _tau_b(truth_levels: np.ndarray, scores: np.ndarray) -> float:
    iu = np.triu_indices(len(scores), 1)
    a = np.sign(truth_levels[:, None] - truth_levels[None, :])[iu]
    b = np.sign(scores[None, :] - scores[:, None])[iu]  # high score = low level
    denom = math.sqrt(float(np.count_nonzero(a)) * float(np.count_nonzero(b)))
    return float((a * b).sum() / denom) if denom else float("nan")


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 0.01
    epochs: int = 200
    seed: int = 0
    margin: float = 1.0
    d: int = 8
    heads: int = 2
    fusion_mode: str = "add"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TrainHyper:
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    loss: float
    train_tau: float


@dataclass
class TrainResult:
    params: ScorerParams
    log: list[EpochLog] = field(default_factory=list)

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("epoch", "loss", "train_tau"))
        for row in self.log:
            w.writerow((row.epoch, repr(row.loss), repr(row.train_tau)))
        return buf.getvalue()


def _infer_dims(examples: Sequence[TrainingExample]) -> tuple[int, int | None, int | None, int | None]:
    first = examples[0]
    model_dim = len(first.candidates[0].model_features)
    task_dim = next((len(e.task.task_features) for e in examples if e.task is not None), None)
    hw_dim = next((len(e.hardware.hw_features) for e in examples if e.hardware is not None), None)
    refine_dim = None
    for e in examples:
        if e.refine:
            refine_dim = len(next(iter(e.refine.values())))
            break
    return model_dim, task_dim, hw_dim, refine_dim


def train_scorer(
    train_set: Sequence[TrainingExample],
    hyper: TrainHyper | Mapping[str, Any] = TrainHyper(),
    mode: str = "fusion",
    init: ScorerParams | None = None,
) -> TrainResult:
    """Fit a scorer by full-batch gradient descent on the pairwise hinge loss.

    ``mode`` selects the task-token inputs: ``"fusion"`` (task + hardware),
    ``"task"`` (task only) or ``"hardware"`` (hardware only).  Examples may
    carry inputs a mode ignores.
    """
    if not isinstance(hyper, TrainHyper):
        hyper = TrainHyper.from_dict(hyper)
    if not train_set:
        raise ValueError("training set is empty")
    for e in train_set:
        if not e.candidates:
            raise ValueError("training example without candidates")
    if init is None:
        model_dim, task_dim, hw_dim, refine_dim = _infer_dims(train_set)
        params = init_params(
            model_dim,
            task_dim if mode != "hardware" else None,
            hw_dim if mode != "task" else None,
            d=hyper.d,
            heads=hyper.heads,
            mode=mode,
            fusion_mode=hyper.fusion_mode,
            refine_dim=refine_dim,
            seed=hyper.seed,
        )
    else:
        params = init.copy()
    if params.mode != mode:
        raise ValueError(f"initial parameters are for mode {params.mode!r}, not {mode!r}")

    prepared = [_prepare(e, params) for e in train_set]
    log: list[EpochLog] = []
    for epoch in range(hyper.epochs):
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = _loss_and_grad(prepared, params, hyper.margin)
        if not math.isfinite(loss):
            raise TrainingDivergedError(hyper.lr, epoch, loss)
        taus = [_tau_b(p.levels, p.X @ params.W_model.T @ _head_vectors(_mu(p.t, p.h, params), params)[1])
                for p in prepared]
        log.append(EpochLog(epoch, loss, float(np.nanmean(taus)) if not all(map(math.isnan, taus)) else math.nan))
        for name, g in grads.items():
            with np.errstate(over="ignore", invalid="ignore"):
                updated = getattr(params, name) - hyper.lr * g
            if not np.all(np.isfinite(updated)):
                raise TrainingDivergedError(hyper.lr, epoch, math.inf)
            setattr(params, name, updated)
    params.trained = True
    return TrainResult(params, log)


# ---------------------------------------------------------------------------
# Recommendation
# ---------------------------------------------------------------------------


def score_candidates(
    task: TaskDescriptor | None, hw: HardwareProfile | None, candidates: Sequence[ModelCard], params: ScorerParams
) -> dict[str, float]:
    mu = extract_task_token(task, hw, params)
    _, c = _head_vectors(mu.vector, params)
    return {card.id: float(extract_model_token(card, params).vector @ c) for card in candidates}


def refinement_features(aggregates: Aggregates | Mapping[str, Mapping[MetricKind, float]]) -> dict[str, list[float]]:
    """Per-model refinement vectors from benchmark aggregates.

    Layout: log latency, log memory, log power, accuracy (0 where absent).
    """
    values = aggregates.values if isinstance(aggregates, Aggregates) else aggregates
    out = {}
    for model_id, metrics in values.items():
        out[model_id] = [
            math.log(max(metrics.get(MetricKind.EXECUTION_TIME_MS, 1.0), 1e-9)),
            math.log(max(metrics.get(MetricKind.MEMORY_MB, 1.0), 1e-9)),
            math.log(max(metrics.get(MetricKind.POWER_W, 1.0), 1e-9)),
            metrics.get(MetricKind.ACCURACY, 0.0),
        ]
    return out


def recommend_fusion(
    task: TaskDescriptor | None,
    hw: HardwareProfile | None,
    candidates: Sequence[ModelCard],
    params: ScorerParams,
    top_k: int | None = None,
    refine: Mapping[str, Sequence[float]] | None = None,
    method: str | None = None,
) -> RankingTable:
    """Rank candidates by similarity; optionally re-score the top K with refined tokens.

    Refined scores only reorder the top-K block.  When a refined score falls
    below a candidate outside the block, the scores of the rest are shifted
    down by a constant so the table stays sorted; their relative order and
    spacing are unchanged.
    """
    if not params.trained:
        raise UntrainedScorerError("scorer parameters have not been trained")
    if not candidates:
        raise ValueError("no candidates to rank")
    method = method or params.mode
    scores = score_candidates(task, hw, candidates, params)
    first = RankingTable.from_scores(scores, method)
    if top_k is None or refine is None:
        return first
    if top_k > len(candidates):
        warnings.warn(f"top_k={top_k} exceeds {len(candidates)} candidates; clamped", stacklevel=2)
        top_k = len(candidates)
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    if params.W_refine is None:
        raise DimensionError("scorer has no refinement projection; train with refinement features")

    head = list(first.candidate_ids[:top_k])
    rest = list(first.candidate_ids[top_k:])
    cards = {c.id: c for c in candidates}
    _, c = _head_vectors(extract_task_token(task, hw, params).vector, params)
    refined = {}
    for cid in head:
        if cid not in refine:
            raise KeyError(f"no refinement features for top-{top_k} candidate {cid}")
        r = _vec(refine[cid], params.W_refine.shape[1], f"refinement for {cid}")
        theta_star = extract_model_token(cards[cid], params).vector + params.W_refine @ r
        refined[cid] = float(theta_star @ c)

    head_table = RankingTable.from_scores(refined, method)
    rest_scores = [scores[cid] for cid in rest]
    if rest_scores and max(rest_scores) >= head_table.scores[-1]:
        spread = max(abs(s) for s in [*rest_scores, *head_table.scores]) or 1.0
        shift = max(rest_scores) - head_table.scores[-1] + 1e-6 * spread
        rest_scores = [s - shift for s in rest_scores]
    ids = list(head_table.candidate_ids) + rest
    all_scores = list(head_table.scores) + rest_scores
    return RankingTable.from_scores(dict(zip(ids, all_scores)), method)
