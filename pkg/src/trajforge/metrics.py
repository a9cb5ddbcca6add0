"""Evaluation metrics and analyses.

pass@k uses the unbiased estimator 1 - C(n-c, k)/C(n, k) per task, computed
in exact integer arithmetic and macro-averaged across tasks. AUROC is the
probability a random positive outscores a random negative, with ties worth
half. The success predictor scores a task by the success fraction among the
m nearest training tasks in embedding space (features: the concatenated
goal and initial observation), then calibrates the raw score with a sigmoid
fitted by maximum likelihood on 5-fold cross-validated scores.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import RunConfig
from .embed import ROLE_GOAL, EmbeddingCache

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TaskAttempts:
    task_id: str
    n: int
    c: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"{self.task_id}: need at least one attempt")
        if not 0 <= self.c <= self.n:
            raise ValueError(f"{self.task_id}: successes {self.c} outside [0, {self.n}]")


class AttemptMatrix:
    """Per-task attempt/success counts for pass@k."""

    def __init__(self, attempts: Sequence[TaskAttempts]):
        if not attempts:
            raise ValueError("attempt matrix cannot be empty")
        self.attempts = list(attempts)

    @classmethod
    def from_outcomes(cls, outcomes: dict[str, list[bool]]) -> "AttemptMatrix":
        return cls([TaskAttempts(tid, len(o), sum(o)) for tid, o in sorted(outcomes.items())])


def pass_at_k_single(n: int, c: int, k: int) -> float:
    """Probability that at least one of k attempts drawn from n succeeds."""
    if k > n:
        raise ValueError(f"k={k} exceeds the {n} recorded attempts")
    total = math.comb(n, k)
    return (total - math.comb(n - c, k)) / total


def pass_at_k(matrix: AttemptMatrix, k: int) -> tuple[dict[str, float], float]:
    """Per-task pass@k and the macro-average across tasks."""
    per_task = {}
    for a in matrix.attempts:
        if k > a.n:
            raise ValueError(f"k={k} exceeds the {a.n} attempts recorded for task {a.task_id}")
        per_task[a.task_id] = pass_at_k_single(a.n, a.c, k)
    macro = sum(per_task.values()) / len(per_task)
    return per_task, macro


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """(concordant + 0.5 * tied) / (positives * negatives) over cross-class pairs."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have equal length")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auroc needs both classes present")
    # Midrank formulation: AUROC = (rank-sum of positives - P(P+1)/2) / (P*N).
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        midrank = (i + j) / 2.0 + 1.0
        ranks[order[i:j + 1]] = midrank
        i = j + 1
    rank_sum = float(np.sum(ranks[labels == 1]))
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass(frozen=True)
class CalibrationBin:
    bin_index: int
    mean_predicted: float
    empirical_rate: float
    count: int


def calibration_table(scores: Sequence[float], labels: Sequence[int],
                      bins: int = 10) -> list[CalibrationBin]:
    """Equal-width bins on [0, 1]; only non-empty bins are reported."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if np.any(scores < 0) or np.any(scores > 1):
        raise ValueError("calibration scores must lie in [0, 1]")
    indexes = np.minimum((scores * bins).astype(int), bins - 1)
    table = []
    for b in range(bins):
        mask = indexes == b
        count = int(np.sum(mask))
        if count == 0:
            continue
        table.append(CalibrationBin(
            bin_index=b,
            mean_predicted=float(np.mean(scores[mask])),
            empirical_rate=float(np.mean(labels[mask])),
            count=count,
        ))
    return table


@dataclass
class PredictorModel:
    """m-NN success-fraction scorer with a fitted sigmoid calibration.

    The raw score of a query is the success fraction among its m nearest
    training embeddings by cosine; calibration maps raw scores through
    sigmoid(a * score + b), with (a, b) fitted on out-of-fold scores only.
    """

    embeddings: np.ndarray
    labels: np.ndarray
    m: int
    a: float
    b: float


def _feature_text(goal_text: str, first_observation: str) -> str:
    return f"{goal_text}\n{first_observation}"


def _knn_scores(train_x: np.ndarray, train_y: np.ndarray, query_x: np.ndarray,
                m: int) -> np.ndarray:
    sims = query_x @ train_x.T
    m = min(m, train_x.shape[0])
    scores = np.empty(query_x.shape[0])
    for i in range(query_x.shape[0]):
        # ties break toward the lower training index
        order = np.lexsort((np.arange(train_x.shape[0]), -sims[i]))[:m]
        scores[i] = float(np.mean(train_y[order]))
    return scores


def _fit_sigmoid(scores: np.ndarray, labels: np.ndarray,
                 iterations: int = 50) -> tuple[float, float]:
    """Max-likelihood logistic fit of labels on a single score feature.

    Newton-Raphson with a tiny ridge term for numerical stability under
    perfect separation.
    """
    a, b = 1.0, 0.0
    ridge = 1e-9
    for _ in range(iterations):
        z = np.clip(a * scores + b, -35.0, 35.0)
        p = 1.0 / (1.0 + np.exp(-z))
        grad_a = float(np.sum((p - labels) * scores)) + ridge * a
        grad_b = float(np.sum(p - labels)) + ridge * b
        w = p * (1.0 - p)
        h_aa = float(np.sum(w * scores * scores)) + ridge
        h_ab = float(np.sum(w * scores))
        h_bb = float(np.sum(w)) + ridge
        det = h_aa * h_bb - h_ab * h_ab
        if det <= 0 or not math.isfinite(det):
            break
        step_a = (h_bb * grad_a - h_ab * grad_b) / det
        step_b = (h_aa * grad_b - h_ab * grad_a) / det
        a -= step_a
        b -= step_b
        if abs(step_a) < 1e-10 and abs(step_b) < 1e-10:
            break
    return a, b


def fit_predictor(task_outcomes: Sequence[tuple[str, str, bool]],
                  cache: EmbeddingCache, cfg: RunConfig) -> PredictorModel:
    """Fit the calibrated success predictor on labeled training tasks.

    task_outcomes rows are (goal_text, first_observation, success). Requires
    at least 20 rows with both classes present.
    """
    if len(task_outcomes) < 20:
        raise ValueError(f"need at least 20 labeled training tasks, got {len(task_outcomes)}")
    labels = np.asarray([1 if s else 0 for _, _, s in task_outcomes], dtype=np.float64)
    if labels.min() == labels.max():
        raise ValueError("degenerate labels: both classes must be present")
    vectors = [cache.embed(_feature_text(g, o), ROLE_GOAL) for g, o, _ in task_outcomes]
    x = np.vstack(vectors)

    n = len(task_outcomes)
    folds = np.arange(n) % 5
    oof_scores = np.empty(n)
    for fold in range(5):
        held = folds == fold
        rest = ~held
        if not held.any() or not rest.any():
            continue
        oof_scores[held] = _knn_scores(x[rest], labels[rest], x[held], cfg.knn_predict_m)
    a, b = _fit_sigmoid(oof_scores, labels)
    return PredictorModel(embeddings=x, labels=labels, m=cfg.knn_predict_m, a=a, b=b)


def predict(model: PredictorModel, goal_text: str, first_observation: str,
            cache: EmbeddingCache) -> float:
    """Calibrated success probability for one task, in (0, 1)."""
    q = cache.embed(_feature_text(goal_text, first_observation), ROLE_GOAL)
    raw = _knn_scores(model.embeddings, model.labels, q[None, :], model.m)[0]
    z = min(max(model.a * raw + model.b, -35.0), 35.0)
    return 1.0 / (1.0 + math.exp(-z))


@dataclass(frozen=True)
class CurveRow:
    trial: str
    tasks_attempted: int
    db_size: int
    success_rate: Optional[float]


def curve(trials: dict[str, list], test_tasks, env_factory: Callable, backend,
          cfg: RunConfig, cache: EmbeddingCache) -> list[CurveRow]:
    """Success-rate-vs-database-size data for checkpointed runs.

    trials maps a trial name to its checkpoint list of (tasks_attempted, db)
    pairs; each checkpointed database is evaluated on the full test set.
    Rows for all trials are followed by mean rows across trials that share a
    tasks_attempted value. A None database yields a warning row with no
    success rate.
    """
    from .bootstrap import evaluate

    rows: list[CurveRow] = []
    by_attempted: dict[int, list[tuple[int, float]]] = {}
    for trial_name in sorted(trials):
        for tasks_attempted, db in trials[trial_name]:
            if db is None:
                logger.warning("missing checkpoint at %d tasks for trial %s; skipped",
                               tasks_attempted, trial_name)
                rows.append(CurveRow(trial_name, tasks_attempted, 0, None))
                continue
            result = evaluate(db, list(test_tasks), env_factory, backend, cfg, cache)
            rows.append(CurveRow(trial_name, tasks_attempted, len(db), result.success_rate))
            by_attempted.setdefault(tasks_attempted, []).append((len(db), result.success_rate))
    for tasks_attempted in sorted(by_attempted):
        entries = by_attempted[tasks_attempted]
        rows.append(CurveRow(
            "mean", tasks_attempted,
            round(sum(size for size, _ in entries) / len(entries)),
            sum(rate for _, rate in entries) / len(entries)))
    return rows
