import random

import pytest

from trajforge.bootstrap import Task
from trajforge.core import Goal, RunConfig, Step, TrajectoryDatabase
from trajforge.embed import BuiltinEmbedder, EmbeddingCache


@pytest.fixture
def cfg():
    return RunConfig(seed=11)


@pytest.fixture
def cache(cfg):
    return EmbeddingCache(BuiltinEmbedder(cfg.embed_dim))


def random_text(rng: random.Random, max_tokens: int = 6) -> str:
    words = ["craft", "stone", "ember", "lake", "forge", "wind", "copper",
             "moss", "dust", "iron", "glow", "thorn", "mire", "vapor"]
    return " ".join(rng.choice(words) for _ in range(rng.randint(1, max_tokens)))


def make_steps(rng: random.Random, n: int) -> list[Step]:
    return [
        Step(index=i, observation=random_text(rng), reasoning=random_text(rng),
             action=random_text(rng))
        for i in range(n)
    ]


def random_db(rng: random.Random, n_trajectories: int, db_id: str = "db",
              with_plan_prob: float = 0.5, with_category_prob: float = 0.3,
              max_len: int = 8) -> TrajectoryDatabase:
    db = TrajectoryDatabase(db_id)
    for i in range(n_trajectories):
        plan = random_text(rng) if rng.random() < with_plan_prob else None
        category = random_text(rng, 2) if rng.random() < with_category_prob else None
        db.add(
            task_id=f"task-{rng.randint(0, max(1, n_trajectories // 2))}",
            goal=Goal(text=random_text(rng), category=category),
            plan=plan,
            steps=make_steps(rng, rng.randint(1, max_len)),
            success=True,
            source="bootstrapped" if rng.random() < 0.8 else "human",
        )
    return db
