"""Environments: the interaction contract and a built-in crafting world.

Environments are deterministic, sparse-reward, and episodic: reset to a
task, step with text actions, learn success only when the episode ends.
The built-in CraftWorld is a synthetic element-combination game with
disjoint train/test goal splits. Every task is solvable in at most two
combinations within a four-step budget, which keeps the whole
database-construction feedback loop testable offline. Real benchmark hosts
attach through the stdio adapter in trajforge.adapter.
"""

from __future__ import annotations

import itertools
import json
import re
from dataclasses import dataclass
from typing import Optional, Protocol

from .core import Goal, Step
from .seeds import stream_rng

CRAFT_MAX_STEPS = 4

ACTION_SPACE_TEXT = (
    "Output actions of the form 'combine X and Y', where X and Y are two "
    "elements from your inventory."
)

_ACTION_RE = re.compile(r"combine\s+([a-z0-9]+)\s+and\s+([a-z0-9]+)", re.IGNORECASE)
_CREATE_RE = re.compile(r"You combine ([a-z0-9]+) and ([a-z0-9]+) to create ([a-z0-9]+)\.")

_CONSONANTS = "bdfghklmnprstvz"
_VOWELS = "aeiou"


class Environment(Protocol):
    """Behavioral contract for task environments.

    success may be true only when done is true, and transitions are
    deterministic given (task, action sequence).
    """

    def reset(self, task_id: str) -> str: ...

    def step(self, action: str) -> tuple[str, bool, bool]: ...

    def action_space_text(self) -> str: ...


@dataclass(frozen=True)
class CraftTask:
    task_id: str
    goal_element: str
    inventory: tuple[str, ...]
    split: str  # "train" or "test"

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "goal_element": self.goal_element,
            "inventory": list(self.inventory),
            "split": self.split,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CraftTask":
        return cls(
            task_id=d["task_id"],
            goal_element=d["goal_element"],
            inventory=tuple(d["inventory"]),
            split=d["split"],
        )


class CraftWorld:
    """A generated element-combination world with a train/test task split."""

    def __init__(self, elements: list[str], recipes: dict[tuple[str, str], str],
                 tasks: list[CraftTask], max_steps: int = CRAFT_MAX_STEPS):
        self.elements = list(elements)
        self.recipes = dict(recipes)
        self.tasks = list(tasks)
        self.max_steps = max_steps
        self._by_id = {t.task_id: t for t in tasks}

    def task(self, task_id: str) -> CraftTask:
        return self._by_id[task_id]

    def train_tasks(self) -> list[CraftTask]:
        return [t for t in self.tasks if t.split == "train"]

    def test_tasks(self) -> list[CraftTask]:
        return [t for t in self.tasks if t.split == "test"]

    def goal_for(self, task: CraftTask) -> Goal:
        # Listing the starting inventory in the goal text gives the lexical
        # retriever ingredient overlap to rank on.
        inv = ", ".join(sorted(task.inventory))
        return Goal(text=f"Create the element {task.goal_element}. You have: {inv}.")

    def product_of(self, x: str, y: str) -> Optional[str]:
        return self.recipes.get(_pair(x, y))

    def to_dict(self) -> dict:
        return {
            "format": "craftworld",
            "version": 1,
            "max_steps": self.max_steps,
            "elements": self.elements,
            "recipes": sorted([a, b, p] for (a, b), p in self.recipes.items()),
            "tasks": [t.to_dict() for t in self.tasks],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CraftWorld":
        if d.get("format") != "craftworld" or d.get("version") != 1:
            raise ValueError("not a supported craftworld file")
        recipes = {_pair(a, b): p for a, b, p in d["recipes"]}
        return cls(
            elements=d["elements"],
            recipes=recipes,
            tasks=[CraftTask.from_dict(t) for t in d["tasks"]],
            max_steps=d.get("max_steps", CRAFT_MAX_STEPS),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "CraftWorld":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _pair(x: str, y: str) -> tuple[str, str]:
    return (x, y) if x <= y else (y, x)


def _nonsense_word(rng) -> str:
    # Pronounceable nonsense so the lexical embedder cannot accidentally
    # encode recipe structure through real-word co-occurrence.
    n_syllables = rng.choice((2, 2, 3))
    word = ""
    for _ in range(n_syllables):
        word += rng.choice(_CONSONANTS) + rng.choice(_VOWELS)
    if rng.random() < 0.5:
        word += rng.choice(_CONSONANTS)
    return word


def generate_craftworld(seed: int, n_elements: int = 40, n_train_tasks: int = 200,
                        n_test_tasks: int = 100) -> CraftWorld:
    """Deterministically generate a solvable world from a seed.

    Element names, recipes, and tasks all derive from the seed. Train and
    test goal-element sets are disjoint; every test-goal element also
    appears as the intermediate of some train-goal recipe, so knowledge
    gathered on training tasks can transfer. Every task is checked solvable
    in at most two combinations.
    """
    if n_elements < 10:
        raise ValueError("need at least 10 elements")
    rng = stream_rng(seed, "craftworld")

    names: set[str] = set()
    while len(names) < n_elements:
        names.add(_nonsense_word(rng))
    elements = sorted(names)
    rng.shuffle(elements)

    n_test_goals = max(4, n_elements // 5)
    n_train_goals = max(4, n_elements // 4)
    n_base = n_elements - n_test_goals - n_train_goals
    if n_base < max(n_test_goals, 6):
        raise ValueError(
            f"{n_elements} elements leave too small a base pool for "
            f"{n_train_goals}+{n_test_goals} goal elements")
    test_goals = elements[:n_test_goals]
    train_goals = elements[n_test_goals:n_test_goals + n_train_goals]
    base = elements[n_test_goals + n_train_goals:]

    recipes: dict[tuple[str, str], str] = {}

    def fresh_pair(pool_a: list[str], pool_b: list[str]) -> tuple[str, str]:
        for _ in range(10_000):
            a, b = rng.choice(pool_a), rng.choice(pool_b)
            if a != b and _pair(a, b) not in recipes:
                return a, b
        raise ValueError("could not find an unused recipe pair; too few elements")

    # Base pair -> test-goal element.
    ingredients: dict[str, tuple[str, str]] = {}
    for goal in test_goals:
        a, b = fresh_pair(base, base)
        recipes[_pair(a, b)] = goal
        ingredients[goal] = (a, b)
    # (test-goal element, base) -> train-goal element; cycling the test goals
    # guarantees each one shows up as an intermediate.
    for i, goal in enumerate(train_goals):
        mid = test_goals[i % len(test_goals)]
        _, d = fresh_pair(base, base)
        while _pair(mid, d) in recipes:
            _, d = fresh_pair(base, base)
        recipes[_pair(mid, d)] = goal
        ingredients[goal] = (mid, d)

    def distractors(exclude: set[str], count: int) -> list[str]:
        pool = [e for e in base if e not in exclude]
        return rng.sample(pool, min(count, len(pool)))

    tasks: list[CraftTask] = []
    for i in range(n_train_tasks):
        goal = train_goals[i % len(train_goals)]
        mid, d = ingredients[goal]
        a, b = ingredients[mid]
        if rng.random() < 0.4:
            inv = {mid, d}          # one combination suffices
        else:
            inv = {a, b, d}         # must craft the intermediate first
        inv.update(distractors(inv | {goal, mid}, 8 - len(inv)))
        tasks.append(CraftTask(f"train-{i:03d}", goal, tuple(sorted(inv)), "train"))
    for i in range(n_test_tasks):
        goal = test_goals[i % len(test_goals)]
        a, b = ingredients[goal]
        inv = {a, b}
        inv.update(distractors(inv | {goal}, 8 - len(inv)))
        tasks.append(CraftTask(f"test-{i:03d}", goal, tuple(sorted(inv)), "test"))

    world = CraftWorld(elements, recipes, tasks)
    for task in tasks:
        if solve_craftworld(world, task) is None:
            raise ValueError(f"generated task {task.task_id} is unsolvable")
    return world


def solve_craftworld(world: CraftWorld, task: CraftTask) -> Optional[list[str]]:
    """Brute-force search for a solution of at most two combinations."""
    inv = set(task.inventory)
    for x, y in itertools.combinations(sorted(inv), 2):
        if world.product_of(x, y) == task.goal_element:
            return [f"combine {x} and {y}"]
    for x, y in itertools.combinations(sorted(inv), 2):
        mid = world.product_of(x, y)
        if mid is None:
            continue
        for u, v in itertools.combinations(sorted(inv | {mid}), 2):
            if world.product_of(u, v) == task.goal_element:
                return [f"combine {x} and {y}", f"combine {u} and {v}"]
    return None


def make_initial_db(world: CraftWorld, n_exemplars: int, seed: int,
                    cfg=None, db_id: str = "seed-db"):
    """Build the initial human-provided exemplar database for a world.

    Exemplars are optimal demonstrations of a seeded sample of training
    tasks with distinct goal elements, written in the same observation/
    reasoning/action format the agent produces.
    """
    from .core import TrajectoryDatabase

    rng = stream_rng(seed, "initial-exemplars")
    candidates = list(world.train_tasks())
    rng.shuffle(candidates)
    chosen: list[CraftTask] = []
    seen_goals: set[str] = set()
    for task in candidates:
        if task.goal_element not in seen_goals:
            chosen.append(task)
            seen_goals.add(task.goal_element)
        if len(chosen) == n_exemplars:
            break

    db = TrajectoryDatabase(db_id, cfg)
    env = CraftWorldEnv(world)
    plan_step = bool(cfg and cfg.plan_step)
    for task in chosen:
        actions = solve_craftworld(world, task)
        if actions is None:
            continue
        obs = env.reset(task.task_id)
        steps: list[Step] = []
        for i, action in enumerate(actions):
            m = _ACTION_RE.search(action)
            product = world.product_of(m.group(1), m.group(2))
            reasoning = f"To create {product}, combine {m.group(1)} and {m.group(2)}."
            steps.append(Step(index=i, observation=obs, reasoning=reasoning, action=action))
            obs, _, _ = env.step(action)
        goal = env.augment_stored_goal(world.goal_for(task), steps)
        plan = f"Combine elements step by step to create {task.goal_element}." if plan_step else None
        db.add(task_id=task.task_id, goal=goal, plan=plan, steps=steps,
               success=True, source="human")
    return db


class CraftWorldEnv:
    """Single-episode environment over a CraftWorld.

    Invalid and unknown combinations consume a step from the budget, like
    any interactive environment where a wasted turn is still a turn.
    """

    def __init__(self, world: CraftWorld):
        self.world = world
        self._task: Optional[CraftTask] = None
        self._inventory: set[str] = set()
        self._steps_used = 0

    def reset(self, task_id: str) -> str:
        self._task = self.world.task(task_id)
        self._inventory = set(self._task.inventory)
        self._steps_used = 0
        return f"You have: {', '.join(sorted(self._inventory))}."

    def _obs(self, prefix: str) -> str:
        return f"{prefix} You have: {', '.join(sorted(self._inventory))}."

    def step(self, action: str) -> tuple[str, bool, bool]:
        if self._task is None:
            raise RuntimeError("environment must be reset before stepping")
        self._steps_used += 1
        out_of_budget = self._steps_used >= self.world.max_steps

        match = _ACTION_RE.search(action.lower())
        if not match:
            return self._obs("invalid action."), out_of_budget, False
        x, y = match.group(1), match.group(2)
        if x not in self._inventory or y not in self._inventory or x == y:
            return self._obs("nothing happens."), out_of_budget, False
        product = self.world.product_of(x, y)
        if product is None:
            return self._obs("nothing happens."), out_of_budget, False

        self._inventory.add(product)
        success = product == self._task.goal_element
        obs = self._obs(f"You combine {x} and {y} to create {product}.")
        return obs, success or out_of_budget, success

    def action_space_text(self) -> str:
        return ACTION_SPACE_TEXT

    def augment_stored_goal(self, goal: Goal, steps: list[Step]) -> Goal:
        """Insertion-time goal transform: append the discovered solution.

        Applies the convention of appending the found solution to the goal
        string of solved tasks, so stored goals carry the recipe chain and
        become strong retrieval targets for tasks needing those recipes.
        Only called for successful episodes, whose final action necessarily
        produced the goal element.
        """
        goal_element = re.match(r"Create the element ([a-z0-9]+)\.", goal.text)
        effective = []
        for i in range(len(steps) - 1):
            m = _CREATE_RE.search(steps[i + 1].observation)
            if m:
                effective.append(f"combine {m.group(1)} and {m.group(2)} to create {m.group(3)}")
        act = _ACTION_RE.search(steps[-1].action.lower())
        if act and goal_element:
            effective.append(
                f"combine {act.group(1)} and {act.group(2)} to create {goal_element.group(1)}")
        if not effective:
            return goal
        return Goal(text=f"{goal.text} Solution: {'; '.join(effective)}.",
                    category=goal.category)
