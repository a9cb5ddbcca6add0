"""Core domain types: goals, steps, trajectories, trajectory databases.

A trajectory is one complete task attempt: the goal, an optional high-level
plan, an ordered list of (observation, reasoning, action) steps, and a binary
success flag. Trajectory databases are ordered, append-only collections of
trajectories; bootstrapped entries must be successful. All types here are
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

SOURCE_HUMAN = "human"
SOURCE_BOOTSTRAPPED = "bootstrapped"
SOURCES = (SOURCE_HUMAN, SOURCE_BOOTSTRAPPED)


@dataclass(frozen=True)
class Goal:
    """A natural-language task goal, optionally tagged with a category.

    The category, when present, is used as an extra retrieval key on suites
    whose tasks carry category labels.
    """

    text: str
    category: Optional[str] = None

    def __post_init__(self):
        if not self.text:
            raise ValueError("goal text cannot be empty")
        if self.category is not None and not self.category:
            raise ValueError("goal category, when present, cannot be empty")

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"text": self.text}
        if self.category is not None:
            d["category"] = self.category
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Goal":
        return cls(text=d["text"], category=d.get("category"))


@dataclass(frozen=True)
class Step:
    """One (observation, reasoning, action) tuple within a trajectory."""

    index: int
    observation: str
    reasoning: str
    action: str

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "observation": self.observation,
            "reasoning": self.reasoning,
            "action": self.action,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Step":
        return cls(
            index=d["index"],
            observation=d["observation"],
            reasoning=d["reasoning"],
            action=d["action"],
        )


@dataclass(frozen=True)
class Trajectory:
    """A complete task attempt, the unit of storage and retrieval.

    Ids are "{db_id}:{counter}" strings: stable across file round-trips and
    sortable by insertion order. created_at is a logical counter, not a
    wall-clock time, so seeded runs stay reproducible.
    """

    id: str
    task_id: str
    goal: Goal
    plan: Optional[str]
    steps: tuple[Step, ...]
    success: bool
    source: str
    created_at: int

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown trajectory source {self.source!r}")
        object.__setattr__(self, "steps", tuple(self.steps))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "task_id": self.task_id,
            "goal": self.goal.to_dict(),
            "plan": self.plan,
            "steps": [s.to_dict() for s in self.steps],
            "success": self.success,
            "source": self.source,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls(
            id=d["id"],
            task_id=d["task_id"],
            goal=Goal.from_dict(d["goal"]),
            plan=d.get("plan"),
            steps=tuple(Step.from_dict(s) for s in d["steps"]),
            success=d["success"],
            source=d["source"],
            created_at=d["created_at"],
        )


@dataclass(frozen=True)
class RunConfig:
    """Knobs shared by retrieval, the agent loop, and the training drivers.

    Defaults: retrieve 6 exemplars per decision, 5-step retrieval windows,
    populations of 5 database instances, sampling temperature 0.1, and a
    minimum of 3 distinct retrieval tasks before a trajectory's quality
    score is considered statistically meaningful.
    """

    k_retrieve: int = 6
    window_size: int = 5
    max_steps: int = 4
    plan_step: bool = False
    population_size: int = 5
    temperature: float = 0.1
    embed_dim: int = 64
    seed: int = 0
    min_retrieval_tasks: int = 3
    knn_predict_m: int = 15

    def __post_init__(self):
        for name in ("k_retrieve", "window_size", "max_steps", "population_size",
                     "embed_dim", "min_retrieval_tasks", "knn_predict_m"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.temperature < 0:
            raise ValueError("temperature cannot be negative")

    def to_dict(self) -> dict:
        return {
            "k_retrieve": self.k_retrieve,
            "window_size": self.window_size,
            "max_steps": self.max_steps,
            "plan_step": self.plan_step,
            "population_size": self.population_size,
            "temperature": self.temperature,
            "embed_dim": self.embed_dim,
            "seed": self.seed,
            "min_retrieval_tasks": self.min_retrieval_tasks,
            "knn_predict_m": self.knn_predict_m,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(**d)


@dataclass(frozen=True)
class ValidationResult:
    """Outcome of a trajectory validation check."""

    ok: bool
    error: Optional[str] = None

    def __bool__(self) -> bool:
        return self.ok


def validate_trajectory(t: Trajectory, cfg: RunConfig) -> ValidationResult:
    """Check a trajectory against the storage invariants.

    Returns ok, or the first violated invariant with a human-readable path.
    Total function: never raises for a structurally complete trajectory.
    """
    def bad(msg: str) -> ValidationResult:
        return ValidationResult(ok=False, error=msg)

    if not t.goal.text:
        return bad("goal.text: empty")
    if t.goal.category is not None and not t.goal.category:
        return bad("goal.category: empty")
    if not t.steps:
        return bad("steps: steps empty")
    for i, step in enumerate(t.steps):
        if step.index != i:
            return bad(f"steps[{i}].index: expected {i}, got {step.index}")
        if not step.observation:
            return bad(f"steps[{i}].observation: empty")
        if not step.action:
            return bad(f"steps[{i}].action: empty")
        if not step.reasoning and t.source != SOURCE_HUMAN:
            return bad(f"steps[{i}].reasoning: empty (only human-imported steps may omit reasoning)")
    if t.plan is None and cfg.plan_step:
        return bad("plan: missing while the run config has plan_step enabled")
    if t.source == SOURCE_BOOTSTRAPPED and not t.success:
        return bad("success: success-only store, bootstrapped trajectories must be successful")
    return ValidationResult(ok=True)


@dataclass(frozen=True)
class LineageEvent:
    """Provenance record left when a database is copied from another."""

    event_seq: int
    copied_from_db_id: str

    def to_dict(self) -> dict:
        return {"event_seq": self.event_seq, "copied_from_db_id": self.copied_from_db_id}

    @classmethod
    def from_dict(cls, d: dict) -> "LineageEvent":
        return cls(event_seq=d["event_seq"], copied_from_db_id=d["copied_from_db_id"])


class TrajectoryDatabase:
    """An ordered, append-only collection of trajectories.

    Enforces unique trajectory ids and the success-only rule for
    bootstrapped entries on every insert path. Mutation is limited to
    appends; stored trajectories are immutable.
    """

    def __init__(self, db_id: str, cfg: Optional[RunConfig] = None):
        if not db_id:
            raise ValueError("db_id cannot be empty")
        self.db_id = db_id
        self.trajectories: list[Trajectory] = []
        self.lineage: list[LineageEvent] = []
        self._cfg = cfg or RunConfig()
        self._ids: set[str] = set()
        self._counter = 0
        # Bumped on every append; retrieval indexes use it for cheap
        # incremental invalidation.
        self.version = 0

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def get(self, trajectory_id: str) -> Optional[Trajectory]:
        for t in self.trajectories:
            if t.id == trajectory_id:
                return t
        return None

    def append(self, t: Trajectory) -> None:
        """Insert a pre-built trajectory (e.g. loaded from a file)."""
        if t.id in self._ids:
            raise ValueError(f"duplicate trajectory id {t.id!r}")
        result = validate_trajectory(t, self._cfg)
        if not result.ok:
            raise ValueError(f"invalid trajectory {t.id!r}: {result.error}")
        self.trajectories.append(t)
        self._ids.add(t.id)
        self._counter = max(self._counter, t.created_at + 1)
        self.version += 1

    def add(self, *, task_id: str, goal: Goal, plan: Optional[str],
            steps: Iterable[Step], success: bool, source: str) -> Trajectory:
        """Build and insert a new trajectory, assigning id and created_at."""
        counter = self._counter
        t = Trajectory(
            id=f"{self.db_id}:{counter}",
            task_id=task_id,
            goal=goal,
            plan=plan,
            steps=tuple(steps),
            success=success,
            source=source,
            created_at=counter,
        )
        self.append(t)
        return t

    def copy_as(self, new_db_id: str, event_seq: int) -> "TrajectoryDatabase":
        """Deep copy under a new id, recording lineage.

        Trajectory ids and created_at counters are preserved so provenance
        and retrieval tie-breaking survive propagation; only additions made
        after the copy carry the new db id.
        """
        clone = TrajectoryDatabase(new_db_id, self._cfg)
        clone.trajectories = list(self.trajectories)
        clone._ids = set(self._ids)
        clone._counter = self._counter
        clone.lineage = list(self.lineage) + [LineageEvent(event_seq, self.db_id)]
        clone.version = 1
        return clone

    def content_hash(self) -> str:
        """Hash of the stored trajectories, independent of db_id."""
        payload = json.dumps([t.to_dict() for t in self.trajectories],
                             sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def to_header_dict(self) -> dict:
        return {
            "db_id": self.db_id,
            "counter": self._counter,
            "lineage": [e.to_dict() for e in self.lineage],
        }

    @classmethod
    def from_parts(cls, header: dict, trajectories: Iterable[Trajectory],
                   cfg: Optional[RunConfig] = None) -> "TrajectoryDatabase":
        db = cls(header["db_id"], cfg)
        for t in trajectories:
            db.append(t)
        db._counter = max(db._counter, header.get("counter", 0))
        db.lineage = [LineageEvent.from_dict(e) for e in header.get("lineage", [])]
        return db

    def deep_copy(self) -> "TrajectoryDatabase":
        """Snapshot with the same id (used by checkpoints, not curation)."""
        clone = TrajectoryDatabase(self.db_id, self._cfg)
        clone.trajectories = list(self.trajectories)
        clone._ids = set(self._ids)
        clone._counter = self._counter
        clone.lineage = copy.copy(self.lineage)
        clone.version = self.version
        return clone
