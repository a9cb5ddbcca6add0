"""Trajectory bootstrapping: grow a database from the agent's own successes.

The driver walks a seeded permutation of the training tasks once, runs one
episode per task, and appends every successful episode to the database as a
new trajectory. Failed episodes never enter the database, but their
retrieval traces still land in the ledger: the quality metric needs the
failure evidence. Snapshots are taken at powers of two of tasks attempted
(plus the final state) so runs can be resumed and success-vs-size curves
plotted.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

from .agent import EpisodeRecord, TERMINATED_ADAPTER_ERROR, run_episode
from .core import Goal, RunConfig, TrajectoryDatabase, SOURCE_BOOTSTRAPPED
from .curation import RetrievalLedger
from .embed import EmbeddingCache
from .retrieval import Retriever
from .seeds import stream_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Task:
    """A runnable task: id plus the goal handed to the agent."""

    task_id: str
    goal: Goal


@dataclass
class Checkpoint:
    tasks_attempted: int
    db: TrajectoryDatabase
    ledger: RetrievalLedger
    success_rate: float


@dataclass
class BootstrapRun:
    """The full record of one bootstrapping pass."""

    run_id: str
    cfg: RunConfig
    task_order: list[str]
    db: TrajectoryDatabase
    ledger: RetrievalLedger
    episodes: list[EpisodeRecord] = field(default_factory=list)
    checkpoints: list[Checkpoint] = field(default_factory=list)
    halted: bool = False

    @property
    def tasks_attempted(self) -> int:
        return len(self.episodes)

    def success_rate(self) -> float:
        if not self.episodes:
            return 0.0
        return sum(e.success for e in self.episodes) / len(self.episodes)

    def last_checkpoint(self) -> Optional[Checkpoint]:
        return self.checkpoints[-1] if self.checkpoints else None


def _is_checkpoint(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def shuffled_task_order(tasks: list[Task], seed: int) -> list[str]:
    """One seeded pass over the training set, no revisits."""
    order = sorted(t.task_id for t in tasks)
    stream_rng(seed, "task-shuffle").shuffle(order)
    return order


def store_episode(db: TrajectoryDatabase, episode: EpisodeRecord, env) -> None:
    """Append a successful episode to the database as a new trajectory.

    Applies the environment's optional goal-augmentation hook at insertion
    time (e.g. appending the discovered solution to the goal string).
    """
    goal = episode.goal
    augment = getattr(env, "augment_stored_goal", None)
    if augment is not None:
        goal = augment(goal, list(episode.steps))
    db.add(task_id=episode.task_id, goal=goal, plan=episode.plan,
           steps=episode.steps, success=True, source=SOURCE_BOOTSTRAPPED)


def bootstrap(initial_db: TrajectoryDatabase, train_tasks: list[Task],
              env_factory: Callable[[], object], backend, cfg: RunConfig,
              cache: EmbeddingCache, *, run_id: str = "bootstrap",
              db_id: str = "m0", resume_from: Optional[BootstrapRun] = None,
              stop_after: Optional[int] = None) -> BootstrapRun:
    """Run (or resume) one bootstrapping pass over the training tasks.

    When resume_from is given, the run continues from its last checkpoint.
    A fatal episode error halts the run, leaving a resumable partial run
    behind. stop_after caps the number of tasks attempted (used to exercise
    resumption). db_id follows the population convention (member 0), so a
    plain bootstrap run is byte-identical to a one-member population.
    """
    by_id = {t.task_id: t for t in train_tasks}
    if resume_from is not None:
        run = resume_from
        ckpt = run.last_checkpoint()
        if ckpt is None:
            raise ValueError("cannot resume a run without checkpoints")
        db = ckpt.db.deep_copy()
        ledger = ckpt.ledger.copy()
        run.episodes = run.episodes[:ckpt.tasks_attempted]
        run.checkpoints = [c for c in run.checkpoints
                           if c.tasks_attempted <= ckpt.tasks_attempted]
        run.halted = False
        start = ckpt.tasks_attempted
    else:
        db = initial_db.copy_as(db_id, event_seq=0)
        ledger = RetrievalLedger()
        run = BootstrapRun(run_id=run_id, cfg=cfg,
                           task_order=shuffled_task_order(train_tasks, cfg.seed),
                           db=db, ledger=ledger)
        start = 0
    run.db = db
    run.ledger = ledger

    env = env_factory()
    retriever = Retriever(db, cache)
    limit = len(run.task_order) if stop_after is None else min(stop_after, len(run.task_order))

    for position in range(start, limit):
        task = by_id[run.task_order[position]]
        episode = run_episode(task.task_id, task.goal, env, retriever, backend, cfg)
        if episode.terminated_by == TERMINATED_ADAPTER_ERROR:
            logger.error("run %s halted by a fatal episode on task %s; "
                         "resume from the last checkpoint", run.run_id, task.task_id)
            run.halted = True
            return run
        run.episodes.append(episode)
        ledger.record_episode(task.task_id, episode.success, episode.retrieval_trace)
        if episode.success:
            store_episode(db, episode, env)
        attempted = position + 1
        if _is_checkpoint(attempted) or attempted == limit:
            run.checkpoints.append(Checkpoint(
                tasks_attempted=attempted, db=db.deep_copy(),
                ledger=ledger.copy(), success_rate=run.success_rate()))
    return run


@dataclass
class EvalResult:
    success_rate: float
    outcomes: dict[str, bool]
    episodes: list[EpisodeRecord]


def evaluate(db: TrajectoryDatabase, test_tasks: list[Task],
             env_factory: Callable[[], object], backend, cfg: RunConfig,
             cache: EmbeddingCache) -> EvalResult:
    """One episode per test task against a frozen database.

    Never writes to the database or any ledger; the mean of the binary
    outcomes is the reported success rate.
    """
    if not test_tasks:
        raise ValueError("empty test set")
    env = env_factory()
    retriever = Retriever(db, cache)
    outcomes: dict[str, bool] = {}
    episodes: list[EpisodeRecord] = []
    for task in test_tasks:
        episode = run_episode(task.task_id, task.goal, env, retriever, backend, cfg)
        outcomes[task.task_id] = episode.success
        episodes.append(episode)
    rate = sum(outcomes.values()) / len(outcomes)
    return EvalResult(success_rate=rate, outcomes=outcomes, episodes=episodes)
