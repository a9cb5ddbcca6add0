"""Database-level and exemplar-level curation.

Database level: maintain N database instances that attempt the same task
sequence independently (their scripted or sampled policies diverge), and at
task counts 10, 20, 40, 80, ... replace the worst-performing instance with
a deep copy of the best, ranked by success rate over the tasks attempted
since the previous threshold. The ledger is copied along with the database
so the surviving instance's retrieval statistics describe its actual
history.

Exemplar level: score every stored trajectory by its retrieval-weighted
quality

    q = sum(outcome_i * freq_i) / sum(freq_i)

over the tasks that retrieved it, then build a composite database that
keeps, per solved training task, only the highest-q (or, for the ablation
arm, lowest-q) trajectory, plus the initial human exemplars. Trajectories
retrieved for fewer than min_retrieval_tasks distinct tasks get a neutral
score equal to the owning run's overall success rate.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

from .agent import EpisodeRecord, TERMINATED_ADAPTER_ERROR, run_episode
from .core import RunConfig, TrajectoryDatabase, SOURCE_BOOTSTRAPPED
from .embed import EmbeddingCache
from .retrieval import Retriever

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LedgerEntry:
    task_id: str
    frequency: int
    outcome: int


class RetrievalLedger:
    """Per-(trajectory, task) retrieval frequencies and task outcomes."""

    def __init__(self):
        # trajectory_id -> {task_id: (frequency, outcome)}
        self.entries: dict[str, dict[str, tuple[int, int]]] = {}

    def record_episode(self, task_id: str, outcome: bool,
                       trace: dict[str, int]) -> None:
        for trajectory_id, frequency in trace.items():
            if frequency < 1:
                raise ValueError(f"retrieval frequency must be >= 1, got {frequency}")
            per_task = self.entries.setdefault(trajectory_id, {})
            if task_id in per_task:
                raise ValueError(
                    f"duplicate ledger entry for ({trajectory_id}, {task_id})")
            per_task[task_id] = (frequency, 1 if outcome else 0)

    def entries_for(self, trajectory_id: str) -> list[LedgerEntry]:
        per_task = self.entries.get(trajectory_id, {})
        return [LedgerEntry(task_id, f, o) for task_id, (f, o) in sorted(per_task.items())]

    def copy(self) -> "RetrievalLedger":
        clone = RetrievalLedger()
        clone.entries = {tid: dict(per_task) for tid, per_task in self.entries.items()}
        return clone

    def content_hash(self) -> str:
        payload = json.dumps(
            {tid: sorted(per_task.items()) for tid, per_task in self.entries.items()},
            sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def to_rows(self) -> list[dict]:
        rows = []
        for trajectory_id in sorted(self.entries):
            for task_id, (f, o) in sorted(self.entries[trajectory_id].items()):
                rows.append({"trajectory_id": trajectory_id, "task_id": task_id,
                             "frequency": f, "outcome": o})
        return rows

    @classmethod
    def from_rows(cls, rows) -> "RetrievalLedger":
        ledger = cls()
        for row in rows:
            per_task = ledger.entries.setdefault(row["trajectory_id"], {})
            per_task[row["task_id"]] = (row["frequency"], row["outcome"])
        return ledger


@dataclass(frozen=True)
class QualityScore:
    trajectory_id: str
    q: float
    n_tasks: int
    neutral: bool


def quality(ledger: RetrievalLedger, trajectory_id: str, cfg: RunConfig,
            global_success_rate: float) -> QualityScore:
    """Retrieval-weighted quality of one trajectory.

    Trajectories retrieved for fewer than cfg.min_retrieval_tasks distinct
    tasks (including never-retrieved ones) get a neutral score equal to the
    run-wide success rate.
    """
    entries = ledger.entries_for(trajectory_id)
    n_tasks = len(entries)
    if n_tasks < cfg.min_retrieval_tasks:
        return QualityScore(trajectory_id, global_success_rate, n_tasks, neutral=True)
    weighted = sum(e.outcome * e.frequency for e in entries)
    total = sum(e.frequency for e in entries)
    return QualityScore(trajectory_id, weighted / total, n_tasks, neutral=False)


@dataclass
class MemberSnapshot:
    tasks_attempted: int
    db: TrajectoryDatabase


@dataclass
class PopulationMember:
    index: int
    db: TrajectoryDatabase
    ledger: RetrievalLedger
    backend: object
    outcomes: list[bool] = field(default_factory=list)
    window_outcomes: list[bool] = field(default_factory=list)
    episodes: list[EpisodeRecord] = field(default_factory=list)
    snapshots: list[MemberSnapshot] = field(default_factory=list)
    frozen: bool = False

    def global_success_rate(self) -> float:
        if not self.outcomes:
            return 0.0
        return sum(self.outcomes) / len(self.outcomes)

    def window_rate(self) -> float:
        if not self.window_outcomes:
            return 0.0
        return sum(self.window_outcomes) / len(self.window_outcomes)


@dataclass(frozen=True)
class CurationEvent:
    event_seq: int
    tasks_attempted: int
    best_index: int
    worst_index: int
    window_rates: tuple[float, ...]
    db_hash: str
    ledger_hash: str

    def to_dict(self) -> dict:
        return {
            "event_seq": self.event_seq,
            "tasks_attempted": self.tasks_attempted,
            "best_index": self.best_index,
            "worst_index": self.worst_index,
            "window_rates": list(self.window_rates),
            "db_hash": self.db_hash,
            "ledger_hash": self.ledger_hash,
        }


@dataclass
class PopulationState:
    members: list[PopulationMember]
    events: list[CurationEvent]
    task_order: list[str]
    cfg: RunConfig


def is_curation_threshold(tasks_attempted: int) -> bool:
    """True at task counts 10 * 2^j for integer j >= 0."""
    if tasks_attempted < 10 or tasks_attempted % 10 != 0:
        return False
    quotient = tasks_attempted // 10
    return (quotient & (quotient - 1)) == 0


def rank_members(members: list[PopulationMember]) -> tuple[int, int]:
    """(best, worst) member indexes by inter-threshold success rate.

    Frozen members always rank last. Ties resolve to the lowest index for
    best and the highest index for worst, so a full tie still propagates
    deterministically.
    """
    def rate(m: PopulationMember) -> float:
        return -1.0 if m.frozen else m.window_rate()

    rates = [rate(m) for m in members]
    best = min(range(len(members)), key=lambda i: (-rates[i], i))
    worst = max(range(len(members)), key=lambda i: (-rates[i], i))
    return best, worst


def run_population(initial_db: TrajectoryDatabase, train_tasks, env_factory: Callable,
                   backend_factory: Callable[[int], object], cfg: RunConfig,
                   cache: EmbeddingCache, *, curation_enabled: bool = True,
                   ) -> PopulationState:
    """Population run: N members attempt the same seeded task sequence.

    Members are conceptually parallel; execution here interleaves them
    task-by-task, which is equivalent because they share nothing between
    thresholds. Each threshold is a full barrier: ranking and replacement
    complete before any member starts the next task.
    """
    from .bootstrap import shuffled_task_order, store_episode

    if cfg.population_size < 1:
        raise ValueError("population size must be >= 1")
    by_id = {t.task_id: t for t in train_tasks}
    task_order = shuffled_task_order(list(train_tasks), cfg.seed)

    members = []
    for i in range(cfg.population_size):
        members.append(PopulationMember(
            index=i,
            db=initial_db.copy_as(f"m{i}", event_seq=0),
            ledger=RetrievalLedger(),
            backend=backend_factory(i),
        ))
    envs = [env_factory() for _ in members]
    retrievers = [Retriever(m.db, cache) for m in members]
    events: list[CurationEvent] = []

    for position, task_id in enumerate(task_order):
        task = by_id[task_id]
        for m in members:
            if m.frozen:
                continue
            episode = run_episode(task.task_id, task.goal, envs[m.index],
                                  retrievers[m.index], m.backend, cfg)
            if episode.terminated_by == TERMINATED_ADAPTER_ERROR:
                logger.error("member %d frozen after fatal episode on %s",
                             m.index, task.task_id)
                m.frozen = True
                continue
            m.episodes.append(episode)
            m.outcomes.append(episode.success)
            m.window_outcomes.append(episode.success)
            m.ledger.record_episode(task.task_id, episode.success,
                                    episode.retrieval_trace)
            if episode.success:
                store_episode(m.db, episode, envs[m.index])

        attempted = position + 1
        if curation_enabled and cfg.population_size >= 2 and is_curation_threshold(attempted):
            best, worst = rank_members(members)
            event_seq = len(events) + 1
            if best != worst:
                source = members[best]
                target = members[worst]
                target.db = source.db.copy_as(f"m{worst}-g{event_seq}", event_seq)
                target.ledger = source.ledger.copy()
                retrievers[worst] = Retriever(target.db, cache)
                target.frozen = source.frozen
            events.append(CurationEvent(
                event_seq=event_seq,
                tasks_attempted=attempted,
                best_index=best,
                worst_index=worst,
                window_rates=tuple(m.window_rate() for m in members),
                db_hash=members[best].db.content_hash(),
                ledger_hash=members[best].ledger.content_hash(),
            ))
            for m in members:
                m.window_outcomes = []
        if is_curation_threshold(attempted) or attempted == len(task_order):
            for m in members:
                m.snapshots.append(MemberSnapshot(attempted, m.db.deep_copy()))

    return PopulationState(members=members, events=events,
                           task_order=task_order, cfg=cfg)


@dataclass(frozen=True)
class _Candidate:
    q: float
    n_tasks: int
    created_at: int
    trajectory_id: str
    member_index: int


def select_exemplars(population: PopulationState, mode: str,
                     initial_db: TrajectoryDatabase,
                     cfg: Optional[RunConfig] = None) -> TrajectoryDatabase:
    """Composite database of per-task best (or worst) trajectories.

    For each training task solved by at least one member, pick the stored
    trajectory with the highest quality score (mode="best") or lowest
    (mode="worst"); ties prefer more retrieval evidence (higher n_tasks),
    then earlier created_at. The initial human exemplars are always
    retained. Propagated duplicates (same trajectory id via database
    copies) are considered once per owning member and stored once.
    """
    if mode not in ("best", "worst"):
        raise ValueError(f"mode must be 'best' or 'worst', got {mode!r}")
    cfg = cfg or population.cfg

    by_task: dict[str, list[tuple[_Candidate, object]]] = {}
    for member in population.members:
        global_rate = member.global_success_rate()
        for t in member.db.trajectories:
            if t.source != SOURCE_BOOTSTRAPPED:
                continue
            score = quality(member.ledger, t.id, cfg, global_rate)
            candidate = _Candidate(q=score.q, n_tasks=score.n_tasks,
                                   created_at=t.created_at, trajectory_id=t.id,
                                   member_index=member.index)
            by_task.setdefault(t.task_id, []).append((candidate, t))

    composite = TrajectoryDatabase(f"composite-{mode}")
    for t in initial_db.trajectories:
        composite.append(t)

    sign = -1.0 if mode == "best" else 1.0
    for task_id in sorted(by_task):
        candidates = by_task[task_id]
        candidates.sort(key=lambda pair: (
            sign * pair[0].q, -pair[0].n_tasks, pair[0].created_at,
            pair[0].trajectory_id, pair[0].member_index))
        winner = candidates[0][1]
        if composite.get(winner.id) is None:
            composite.append(winner)
    return composite
