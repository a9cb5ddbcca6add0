"""Exact k-nearest-neighbor multi-key retrieval over a trajectory database.

Retrieval happens at two levels. Trajectory level: candidates are scored by
the arithmetic mean of cosine similarities over the provided keys (goal,
plan, category); keys a trajectory lacks are dropped from its mean rather
than scored zero. State level: within each selected trajectory, the step
most similar to the state key (an observation or a reasoning string) anchors
a contiguous window of steps that is returned as the in-context fragment.

Search is a flat exact scan over precomputed per-role embedding matrices;
databases here stay small enough (~10^4 trajectories) that no approximate
index is warranted.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Goal, RunConfig, Step, Trajectory, TrajectoryDatabase
from .embed import (
    ROLE_CATEGORY,
    ROLE_GOAL,
    ROLE_OBSERVATION,
    ROLE_PLAN,
    ROLE_REASONING,
    EmbeddingCache,
)

TRAJ_KEY_ROLES = (ROLE_GOAL, ROLE_PLAN, ROLE_CATEGORY)
STATE_KEY_ROLES = (ROLE_OBSERVATION, ROLE_REASONING)

# Similarity scores are quantized before ranking so that candidates whose
# scores are equal as real numbers (but were accumulated in different float
# orders) reliably fall through to the deterministic created_at/id
# tie-break. Distinct scores in practice differ by far more than this.
SCORE_DECIMALS = 12


def quantize_score(score: float) -> float:
    return round(score, SCORE_DECIMALS)


@dataclass(frozen=True)
class QueryKeys:
    """Keys for one retrieval call.

    traj_keys maps a subset of {goal, plan, category} to query strings;
    state_key, when present, is a (role, text) pair with role in
    {observation, reasoning}.
    """

    traj_keys: dict
    state_key: Optional[tuple[str, str]] = None

    def __post_init__(self):
        if not self.traj_keys:
            raise ValueError("at least one trajectory-level key is required")
        for role in self.traj_keys:
            if role not in TRAJ_KEY_ROLES:
                raise ValueError(f"invalid trajectory key role {role!r}")
        if self.state_key is not None and self.state_key[0] not in STATE_KEY_ROLES:
            raise ValueError(f"invalid state key role {self.state_key[0]!r}")


@dataclass(frozen=True)
class RetrievedWindow:
    """A contiguous fragment of a trajectory returned by retrieval.

    anchor_index is the absolute step index of the most-similar state, or
    None when no state key was given and the whole trajectory is returned.
    """

    trajectory_id: str
    goal: Goal
    plan: Optional[str]
    steps: tuple[Step, ...]
    anchor_index: Optional[int]
    traj_score: float


class RetrievalTrace:
    """Retrieval-frequency counts accumulated over one episode."""

    def __init__(self):
        self.counts: Counter = Counter()

    def record(self, trajectory_ids) -> None:
        self.counts.update(trajectory_ids)

    def as_dict(self) -> dict[str, int]:
        return dict(self.counts)


def window_bounds(length: int, anchor: int, window_size: int) -> tuple[int, int]:
    """Half-open [start, end) slice of at most window_size steps around anchor."""
    if not 0 <= anchor < length:
        raise ValueError(f"anchor {anchor} out of range for length {length}")
    if window_size < 1:
        raise ValueError("window_size must be >= 1")
    start = max(0, anchor - window_size // 2)
    end = min(length, anchor + (window_size + 1) // 2)
    return start, end


def _traj_key_text(t: Trajectory, role: str) -> Optional[str]:
    if role == ROLE_GOAL:
        return t.goal.text
    if role == ROLE_PLAN:
        return t.plan
    if role == ROLE_CATEGORY:
        return t.goal.category
    raise ValueError(f"not a trajectory key role: {role!r}")


class Retriever:
    """Flat exact-kNN index over one database.

    Per-role matrices are rebuilt incrementally: the database is append-only,
    so rows are only ever added.
    """

    def __init__(self, db: TrajectoryDatabase, cache: EmbeddingCache):
        self.db = db
        self.cache = cache
        self._built_for: Optional[int] = None
        self._rows: dict[str, list] = {role: [] for role in TRAJ_KEY_ROLES}
        self._present: dict[str, list] = {role: [] for role in TRAJ_KEY_ROLES}
        self._matrix: dict[str, Optional[np.ndarray]] = {role: None for role in TRAJ_KEY_ROLES}

    def _refresh(self) -> None:
        if self._built_for == self.db.version and \
                len(self._rows[ROLE_GOAL]) == len(self.db.trajectories):
            return
        for role in TRAJ_KEY_ROLES:
            rows = self._rows[role]
            present = self._present[role]
            for t in self.db.trajectories[len(rows):]:
                text = _traj_key_text(t, role)
                if text is None:
                    rows.append(None)
                    present.append(False)
                else:
                    rows.append(self.cache.embed(text, role))
                    present.append(True)
            self._matrix[role] = None
        self._built_for = self.db.version

    def _role_matrix(self, role: str, dim: int) -> np.ndarray:
        m = self._matrix[role]
        if m is None or m.shape[0] != len(self._rows[role]):
            rows = [r if r is not None else np.zeros(dim) for r in self._rows[role]]
            m = np.vstack(rows) if rows else np.zeros((0, dim))
            self._matrix[role] = m
        return m

    def retrieve(self, q: QueryKeys, k: int, window_size: int) -> list[RetrievedWindow]:
        """Top-k windows by mean trajectory-key similarity.

        Ties break toward smaller created_at, then lexicographic id. An
        empty database yields an empty list.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        trajectories = self.db.trajectories
        if not trajectories:
            return []
        self._refresh()

        n = len(trajectories)
        score_sum = np.zeros(n, dtype=np.float64)
        key_count = np.zeros(n, dtype=np.int64)
        for role in TRAJ_KEY_ROLES:  # fixed role order keeps float sums stable
            text = q.traj_keys.get(role)
            if text is None:
                continue
            qv = self.cache.embed(text, role)
            # rows are unit-norm or null, so the dot product is the cosine
            sims = self._role_matrix(role, qv.shape[0]) @ qv
            present = np.asarray(self._present[role], dtype=bool)
            score_sum += np.where(present, sims, 0.0)
            key_count += present
        scores = np.where(key_count > 0, score_sum / np.maximum(key_count, 1), 0.0)
        ranked = [quantize_score(float(s)) for s in scores]

        order = sorted(
            range(n),
            key=lambda i: (-ranked[i], trajectories[i].created_at, trajectories[i].id),
        )[:k]

        windows = []
        for i in order:
            t = trajectories[i]
            windows.append(self._make_window(t, q.state_key, window_size, ranked[i]))
        return windows

    def _make_window(self, t: Trajectory, state_key: Optional[tuple[str, str]],
                     window_size: int, score: float) -> RetrievedWindow:
        if state_key is None:
            return RetrievedWindow(
                trajectory_id=t.id, goal=t.goal, plan=t.plan,
                steps=t.steps, anchor_index=None, traj_score=score)
        role, text = state_key
        qv = self.cache.embed(text, role)
        best_idx = 0
        best_sim = None
        for idx, step in enumerate(t.steps):
            step_text = step.observation if role == ROLE_OBSERVATION else step.reasoning
            sim = quantize_score(float(np.dot(self.cache.embed(step_text, role), qv)))
            if best_sim is None or sim > best_sim:
                best_sim = sim
                best_idx = idx
        start, end = window_bounds(len(t.steps), best_idx, window_size)
        return RetrievedWindow(
            trajectory_id=t.id, goal=t.goal, plan=t.plan,
            steps=t.steps[start:end], anchor_index=best_idx, traj_score=score)


def build_decision_keys(goal: Goal, plan: Optional[str],
                        state_role: str, state_text: str) -> QueryKeys:
    """Keys for a reason/act decision: goal (+plan, +category) and one state key."""
    traj_keys = {ROLE_GOAL: goal.text}
    if plan is not None:
        traj_keys[ROLE_PLAN] = plan
    if goal.category is not None:
        traj_keys[ROLE_CATEGORY] = goal.category
    return QueryKeys(traj_keys=traj_keys, state_key=(state_role, state_text))


def retrieve_for_decision(retriever: Retriever, goal: Goal, plan: Optional[str],
                          step_text: str, role: str, cfg: RunConfig,
                          trace: Optional[RetrievalTrace] = None,
                          ) -> tuple[list[RetrievedWindow], RetrievalTrace]:
    """Retrieve for one decision point and record retrieval frequencies.

    The first decision of an episode keys on the initial observation; later
    decisions key on generated reasoning. Each returned trajectory id gets
    one count increment in the trace, which accumulates across all decision
    points of an episode.
    """
    if trace is None:
        trace = RetrievalTrace()
    q = build_decision_keys(goal, plan, role, step_text)
    windows = retriever.retrieve(q, cfg.k_retrieve, cfg.window_size)
    trace.record(w.trajectory_id for w in windows)
    return windows, trace
