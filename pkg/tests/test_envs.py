import itertools
import json

import pytest

from trajforge.core import RunConfig
from trajforge.envs import (
    CraftWorld,
    CraftWorldEnv,
    generate_craftworld,
    make_initial_db,
    solve_craftworld,
)


@pytest.fixture(scope="module")
def world():
    return generate_craftworld(21, n_elements=40, n_train_tasks=60, n_test_tasks=30)


def test_generation_is_deterministic(tmp_path):
    a = generate_craftworld(5, 40, 30, 10)
    b = generate_craftworld(5, 40, 30, 10)
    pa, pb = tmp_path / "a.json", tmp_path / "b.json"
    a.save(pa)
    b.save(pb)
    assert pa.read_bytes() == pb.read_bytes()
    assert generate_craftworld(6, 40, 30, 10).to_dict() != a.to_dict()


def test_round_trip_through_file(world, tmp_path):
    path = tmp_path / "world.json"
    world.save(path)
    loaded = CraftWorld.load(path)
    assert loaded.to_dict() == world.to_dict()


def test_train_and_test_goals_are_disjoint(world):
    train_goals = {t.goal_element for t in world.train_tasks()}
    test_goals = {t.goal_element for t in world.test_tasks()}
    assert train_goals and test_goals
    assert train_goals & test_goals == set()


def test_every_task_is_solvable_within_two_steps(world):
    # independent verification: execute the solver's plan in the environment
    env = CraftWorldEnv(world)
    for task in world.tasks:
        actions = solve_craftworld(world, task)
        assert actions is not None and len(actions) <= 2, task.task_id
        env.reset(task.task_id)
        done = success = False
        for action in actions:
            assert not done
            _, done, success = env.step(action)
        assert success, task.task_id


def test_rejects_too_few_elements():
    with pytest.raises(ValueError):
        generate_craftworld(0, n_elements=9)


def test_one_step_solve(world):
    env = CraftWorldEnv(world)
    task = next(t for t in world.tasks if len(solve_craftworld(world, t)) == 1)
    env.reset(task.task_id)
    obs, done, success = env.step(solve_craftworld(world, task)[0])
    assert done and success
    assert f"to create {task.goal_element}" in obs
    assert task.goal_element in obs.split("You have: ")[1]


def test_unknown_combination_consumes_budget(world):
    env = CraftWorldEnv(world)
    task = world.tasks[0]
    env.reset(task.task_id)
    inv = sorted(task.inventory)
    absent = next(e for e in world.elements if e not in task.inventory)
    obs, done, success = env.step(f"combine {inv[0]} and {absent}")
    assert obs.startswith("nothing happens.")
    assert not done and not success


def test_unparseable_action_consumes_budget(world):
    env = CraftWorldEnv(world)
    env.reset(world.tasks[0].task_id)
    obs, done, success = env.step("open the mysterious door")
    assert obs.startswith("invalid action.")
    assert not done and not success


def test_budget_exhaustion_after_four_wasted_steps(world):
    env = CraftWorldEnv(world)
    env.reset(world.tasks[0].task_id)
    results = [env.step("do nothing useful") for _ in range(4)]
    assert [r[1] for r in results] == [False, False, False, True]
    assert all(not r[2] for r in results)


def test_rollouts_are_bit_identical(world):
    task = world.tasks[3]
    actions = ["combine x and y", solve_craftworld(world, task)[0], "garbage", "garbage"]
    transcripts = []
    for _ in range(2):
        env = CraftWorldEnv(world)
        transcript = [env.reset(task.task_id)]
        for action in actions:
            obs, done, success = env.step(action)
            transcript.append((obs, done, success))
            if done:
                break
        transcripts.append(transcript)
    assert transcripts[0] == transcripts[1]


def test_success_only_when_done(world):
    env = CraftWorldEnv(world)
    for task in world.tasks[:20]:
        env.reset(task.task_id)
        for action in solve_craftworld(world, task):
            obs, done, success = env.step(action)
            assert done or not success


def test_initial_db_exemplars(world):
    cfg = RunConfig(seed=3)
    db = make_initial_db(world, 4, seed=3, cfg=cfg)
    assert len(db) == 4
    goals = set()
    for t in db.trajectories:
        assert t.source == "human"
        assert t.success
        assert "Solution:" in t.goal.text
        goals.add(t.task_id)
    assert len(goals) == 4
    again = make_initial_db(world, 4, seed=3, cfg=cfg)
    assert again.content_hash() == db.content_hash()


def test_goal_augmentation_appends_solution(world):
    from trajforge.agent import run_episode
    from trajforge.backends import ScriptedBackend
    from trajforge.core import TrajectoryDatabase
    from trajforge.embed import BuiltinEmbedder, EmbeddingCache
    from trajforge.retrieval import Retriever

    cfg = RunConfig(seed=1)
    cache = EmbeddingCache(BuiltinEmbedder(cfg.embed_dim))
    db = make_initial_db(world, 4, seed=1, cfg=cfg)
    env = CraftWorldEnv(world)
    exemplar_task = db.trajectories[0].task_id
    episode = run_episode(exemplar_task, world.goal_for(world.task(exemplar_task)),
                          env, Retriever(db, cache), ScriptedBackend(9), cfg)
    assert episode.success
    augmented = env.augment_stored_goal(episode.goal, list(episode.steps))
    assert augmented.text.startswith(episode.goal.text)
    assert f"to create {world.task(exemplar_task).goal_element}" in augmented.text
