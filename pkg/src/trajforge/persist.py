"""File formats: JSON Lines everywhere.

Trajectory databases are one header line plus one trajectory object per
line; ledgers, episodes, and curation events are one record per line.
Formats carry a single integer version; unknown versions are rejected
outright rather than migrated. The fine-tune exporter emits chat-format
training examples that alternate assistant (thought + action) and user
(observation) turns after the goal message.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from .agent import EpisodeRecord
from .core import RunConfig, Trajectory, TrajectoryDatabase
from .curation import CurationEvent, RetrievalLedger
from .embed import ROLE_CATEGORY, ROLE_GOAL, ROLE_PLAN, ROLE_OBSERVATION, ROLE_REASONING, EmbeddingCache

logger = logging.getLogger(__name__)

DB_FORMAT = "trajdb"
DB_VERSION = 1

FINETUNE_SYSTEM = (
    "You are a ReAct agent that helps users accomplish tasks. Given a goal, you will"
    " receive observations about the environment and respond with your reasoning and"
    " actions. For each observation, first think through the problem step by step"
    " (Thought), then decide on an action (Action). Your actions should be clear,"
    " concise, and directly executable in the environment."
)


def _traj_embedding_block(t: Trajectory, cache: EmbeddingCache) -> dict:
    block: dict = {
        ROLE_GOAL: cache.embed(t.goal.text, ROLE_GOAL).tolist(),
        "steps": [
            {
                ROLE_OBSERVATION: cache.embed(s.observation, ROLE_OBSERVATION).tolist(),
                ROLE_REASONING: cache.embed(s.reasoning, ROLE_REASONING).tolist(),
            }
            for s in t.steps
        ],
    }
    if t.plan is not None:
        block[ROLE_PLAN] = cache.embed(t.plan, ROLE_PLAN).tolist()
    if t.goal.category is not None:
        block[ROLE_CATEGORY] = cache.embed(t.goal.category, ROLE_CATEGORY).tolist()
    return block


def save_db(db: TrajectoryDatabase, path, embed_fingerprint: str,
            cache: Optional[EmbeddingCache] = None) -> None:
    """Write a database as JSON Lines; optionally inline cached embeddings."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        header = {"format": DB_FORMAT, "version": DB_VERSION, "embed": embed_fingerprint}
        header.update(db.to_header_dict())
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for t in db.trajectories:
            record = t.to_dict()
            if cache is not None:
                record["embeddings"] = _traj_embedding_block(t, cache)
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_db(path, expected_fingerprint: Optional[str] = None,
            cache: Optional[EmbeddingCache] = None,
            cfg: Optional[RunConfig] = None) -> TrajectoryDatabase:
    """Load a JSON Lines database, rejecting unknown versions.

    When the stored embedder fingerprint does not match the expected one,
    inlined embeddings are discarded (they will be recomputed on demand);
    otherwise they preload the cache.
    """
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty database file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}:1: malformed header: {exc}") from None
    if header.get("format") != DB_FORMAT:
        raise ValueError(f"{path}: not a {DB_FORMAT} file")
    if header.get("version") != DB_VERSION:
        raise ValueError(f"{path}: unsupported version {header.get('version')!r}")
    fingerprint_ok = expected_fingerprint is None or header.get("embed") == expected_fingerprint
    if not fingerprint_ok:
        logger.warning("%s: embedder fingerprint %r != expected %r; embeddings will be recomputed",
                       path, header.get("embed"), expected_fingerprint)

    trajectories = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            raise ValueError(f"{path}:{lineno}: blank line in database file")
        try:
            record = json.loads(line)
            embeddings = record.pop("embeddings", None)
            t = Trajectory.from_dict(record)
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValueError(f"{path}:{lineno}: malformed trajectory line: {exc}") from None
        trajectories.append(t)
        if embeddings and fingerprint_ok and cache is not None:
            _preload_cache(cache, t, embeddings)
    return TrajectoryDatabase.from_parts(header, trajectories, cfg)


def _preload_cache(cache: EmbeddingCache, t: Trajectory, block: dict) -> None:
    if ROLE_GOAL in block:
        cache.put(t.goal.text, ROLE_GOAL, np.asarray(block[ROLE_GOAL]))
    if ROLE_PLAN in block and t.plan is not None:
        cache.put(t.plan, ROLE_PLAN, np.asarray(block[ROLE_PLAN]))
    if ROLE_CATEGORY in block and t.goal.category is not None:
        cache.put(t.goal.category, ROLE_CATEGORY, np.asarray(block[ROLE_CATEGORY]))
    for step, vectors in zip(t.steps, block.get("steps", [])):
        if ROLE_OBSERVATION in vectors:
            cache.put(step.observation, ROLE_OBSERVATION, np.asarray(vectors[ROLE_OBSERVATION]))
        if ROLE_REASONING in vectors:
            cache.put(step.reasoning, ROLE_REASONING, np.asarray(vectors[ROLE_REASONING]))


def save_ledger(ledger: RetrievalLedger, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for row in ledger.to_rows():
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_ledger(path) -> RetrievalLedger:
    rows = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: malformed ledger line: {exc}") from None
    return RetrievalLedger.from_rows(rows)


def save_episodes(episodes: list[EpisodeRecord], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for e in episodes:
            fh.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")


def load_episodes(path) -> list[EpisodeRecord]:
    episodes = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                episodes.append(EpisodeRecord.from_dict(json.loads(line)))
    return episodes


def save_events(events: list[CurationEvent], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for e in events:
            fh.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")


def finetune_messages(t: Trajectory) -> list[dict]:
    """Chat-format messages for one trajectory.

    Layout: system, then "Goal + initial observation" from the user, then
    alternating assistant Thought/Action turns and user Observation turns,
    ending with the final assistant message.
    """
    if not t.steps:
        raise ValueError(f"trajectory {t.id} has no steps")
    messages = [
        {"role": "system", "content": FINETUNE_SYSTEM},
        {"role": "user",
         "content": f"Goal: {t.goal.text} \n Initial observation: {t.steps[0].observation}"},
    ]
    for i, step in enumerate(t.steps):
        if not step.reasoning:
            logger.warning("trajectory %s step %d has empty reasoning; exporting empty Thought",
                           t.id, i)
        messages.append({"role": "assistant",
                         "content": f"Thought: {step.reasoning}\nAction: {step.action}"})
        if i + 1 < len(t.steps):
            messages.append({"role": "user",
                             "content": f"Observation: {t.steps[i + 1].observation}"})
    return messages


def export_finetune(db: TrajectoryDatabase, path) -> int:
    """Write fine-tuning examples for every successful trajectory.

    Returns the number of exported examples; failed trajectories are
    excluded. An empty database is an error.
    """
    if len(db) == 0:
        raise ValueError("cannot export an empty database")
    count = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for t in db.trajectories:
            if not t.success:
                logger.warning("skipping failed trajectory %s in fine-tune export", t.id)
                continue
            fh.write(json.dumps({"messages": finetune_messages(t)}, sort_keys=True) + "\n")
            count += 1
    return count
