import json
import random

import pytest

from trajforge.core import (
    Goal,
    RunConfig,
    Step,
    Trajectory,
    TrajectoryDatabase,
    validate_trajectory,
)

from conftest import make_steps, random_db, random_text


def make_trajectory(steps=None, success=True, source="bootstrapped", plan=None):
    if steps is None:
        steps = [Step(0, "you see a lever", "pull it", "pull lever")]
    return Trajectory(
        id="db:0", task_id="t1", goal=Goal("open the gate"), plan=plan,
        steps=tuple(steps), success=success, source=source, created_at=0)


def test_goal_requires_text():
    with pytest.raises(ValueError):
        Goal("")
    with pytest.raises(ValueError):
        Goal("x", category="")


def test_validate_rejects_empty_steps(cfg):
    t = make_trajectory(steps=[])
    result = validate_trajectory(t, cfg)
    assert not result.ok
    assert "steps empty" in result.error


def test_validate_rejects_failed_bootstrapped(cfg):
    t = make_trajectory(success=False, source="bootstrapped")
    result = validate_trajectory(t, cfg)
    assert not result.ok
    assert "success-only store" in result.error


def test_validate_happy_path(cfg):
    steps = [
        Step(0, "a closed door", "open it", "open door"),
        Step(1, "a dark room", "light helps", "turn on lamp"),
        Step(2, "a lit room", "done here", "leave"),
    ]
    assert validate_trajectory(make_trajectory(steps=steps), cfg).ok


def test_validate_checks_step_indexes(cfg):
    steps = [Step(1, "obs", "why", "act")]
    result = validate_trajectory(make_trajectory(steps=steps), cfg)
    assert not result.ok and "index" in result.error


def test_validate_human_steps_may_omit_reasoning(cfg):
    steps = [Step(0, "obs", "", "act")]
    assert validate_trajectory(make_trajectory(steps=steps, source="human"), cfg).ok
    result = validate_trajectory(make_trajectory(steps=steps, source="bootstrapped"), cfg)
    assert not result.ok and "reasoning" in result.error


def test_validate_plan_required_when_plan_step_enabled():
    cfg = RunConfig(plan_step=True)
    result = validate_trajectory(make_trajectory(plan=None), cfg)
    assert not result.ok and "plan" in result.error
    assert validate_trajectory(make_trajectory(plan="go do it"), cfg).ok


def test_db_insert_rejects_failed_bootstrapped():
    db = TrajectoryDatabase("db")
    with pytest.raises(ValueError, match="success-only"):
        db.append(make_trajectory(success=False))


def test_db_rejects_duplicate_ids():
    db = TrajectoryDatabase("db")
    db.append(make_trajectory())
    with pytest.raises(ValueError, match="duplicate"):
        db.append(make_trajectory())


def test_db_ids_and_created_at_are_sequential():
    db = TrajectoryDatabase("run7")
    for i in range(3):
        t = db.add(task_id=f"t{i}", goal=Goal("g"), plan=None,
                   steps=[Step(0, "o", "r", "a")], success=True, source="bootstrapped")
        assert t.id == f"run7:{i}"
        assert t.created_at == i


def test_copy_as_preserves_ids_and_tracks_lineage():
    db = TrajectoryDatabase("origin")
    db.add(task_id="t", goal=Goal("g"), plan=None,
           steps=[Step(0, "o", "r", "a")], success=True, source="bootstrapped")
    clone = db.copy_as("fork", event_seq=3)
    assert clone.trajectories[0].id == "origin:0"
    assert clone.lineage[-1].copied_from_db_id == "origin"
    assert clone.content_hash() == db.content_hash()
    added = clone.add(task_id="t2", goal=Goal("g2"), plan=None,
                      steps=[Step(0, "o", "r", "a")], success=True, source="bootstrapped")
    assert added.id == "fork:1"
    assert clone.content_hash() != db.content_hash()


def test_serialization_round_trip_randomized():
    # 1,000 randomized instances across the core types
    rng = random.Random(20240)
    for trial in range(1000):
        plan = random_text(rng) if rng.random() < 0.5 else None
        category = random_text(rng, 2) if rng.random() < 0.5 else None
        t = Trajectory(
            id=f"db:{trial}", task_id=f"task-{rng.randint(0, 99)}",
            goal=Goal(random_text(rng), category=category), plan=plan,
            steps=tuple(make_steps(rng, rng.randint(1, 6))),
            success=True, source=rng.choice(["human", "bootstrapped"]),
            created_at=trial)
        decoded = Trajectory.from_dict(json.loads(json.dumps(t.to_dict())))
        assert decoded == t
    cfg = RunConfig(seed=rng.getrandbits(32))
    assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_runconfig_defaults_and_validation():
    cfg = RunConfig()
    assert cfg.k_retrieve == 6
    assert cfg.window_size == 5
    assert cfg.population_size == 5
    assert cfg.temperature == 0.1
    assert cfg.min_retrieval_tasks == 3
    assert cfg.embed_dim == 64
    with pytest.raises(ValueError):
        RunConfig(k_retrieve=0)
    with pytest.raises(ValueError):
        RunConfig(temperature=-0.5)


def test_content_hash_ignores_db_id():
    rng = random.Random(5)
    db = random_db(rng, 10, db_id="alpha")
    clone = db.copy_as("beta", event_seq=1)
    assert db.content_hash() == clone.content_hash()
