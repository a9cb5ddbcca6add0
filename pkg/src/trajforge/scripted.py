"""The deterministic scripted policy used for offline verification.

The policy replaces the LLM in the crafting harness. It is exemplar-gated:
it parses the goal and current inventory out of the rendered prompt, mines
the retrieved in-context examples for recipe statements of the form
"combine X and Y to create Z", and acts on them. If the examples cover the
goal (or a needed intermediate), the policy reproduces that combination;
otherwise it falls back to a uniformly random valid pair from a seeded
generator keyed by (seed, task, step). Success probability therefore rises
with exemplar coverage, which is exactly the positive feedback loop the
bootstrapping drivers rely on, but fully deterministically.
"""

from __future__ import annotations

import itertools
import random
import re
from typing import Optional

from .seeds import stable_hash64

_RECIPE_RE = re.compile(r"combine ([a-z0-9]+) and ([a-z0-9]+) to create ([a-z0-9]+)")
_INTENT_RE = re.compile(r"[Tt]o create ([a-z0-9]+), combine ([a-z0-9]+) and ([a-z0-9]+)")
_PROPOSED_RE = re.compile(r"combine ([a-z0-9]+) and ([a-z0-9]+)")
_GOAL_RE = re.compile(r"^goal: Create the element ([a-z0-9]+)\.", re.MULTILINE)
_INVENTORY_RE = re.compile(r"You have: ([a-z0-9, ]+)\.")
_OBSERVATION_LINE = re.compile(r"^observation: ", re.MULTILINE)


def _split_request(request_text: str) -> tuple[str, str]:
    """Split a rendered request into (exemplar region, current-task region).

    The user prompt always starts with its own "goal:" line and comes after
    the system prompt, so the last goal line marks the boundary.
    """
    matches = list(_GOAL_RE.finditer(request_text))
    if not matches:
        return request_text, ""
    split_at = matches[-1].start()
    return request_text[:split_at], request_text[split_at:]


def _recipe_book(exemplar_text: str) -> dict[str, tuple[str, str]]:
    """product -> ingredient pair, first statement wins."""
    book: dict[str, tuple[str, str]] = {}
    for x, y, product in _RECIPE_RE.findall(exemplar_text):
        book.setdefault(product, (x, y))
    for product, x, y in _INTENT_RE.findall(exemplar_text):
        book.setdefault(product, (x, y))
    return book


def _fallback_rng(seed: int, task_key: str, step: int) -> random.Random:
    return random.Random(stable_hash64(f"{seed}|{task_key}|{step}"))


def _decide(goal: str, inventory: list[str], book: dict[str, tuple[str, str]],
            rng: random.Random) -> tuple[tuple[str, str], Optional[str]]:
    """Pick a combination; returns ((x, y), known product or None)."""
    have = set(inventory)
    known = book.get(goal)
    if known and known[0] in have and known[1] in have:
        return known, goal
    if known:
        for missing in known:
            if missing in have:
                continue
            sub = book.get(missing)
            if sub and sub[0] in have and sub[1] in have:
                return sub, missing
    pairs = list(itertools.combinations(sorted(have), 2))
    if not pairs:
        first = inventory[0] if inventory else "nothing"
        return (first, first), None
    return rng.choice(pairs), None


def scripted_complete(request_text: str, seed: int) -> str:
    """Deterministic completion for a rendered plan/reason/act request."""
    exemplars, current = _split_request(request_text)

    goal_match = _GOAL_RE.search(current)
    goal = goal_match.group(1) if goal_match else ""

    if request_text.endswith("plan: "):
        return f"Combine elements step by step to create {goal}."

    inventories = _INVENTORY_RE.findall(current)
    inventory = [e.strip() for e in inventories[-1].split(",")] if inventories else []
    step = len(_OBSERVATION_LINE.findall(current))
    # Task identity for the fallback stream: the goal line plus the episode's
    # first observation (which carries the starting inventory).
    first_obs = inventories[0] if inventories else ""
    task_key = f"{goal}|{first_obs}"

    if request_text.endswith("action: "):
        # The decision was made while reasoning; reproduce it.
        last_reasoning = None
        for line in current.splitlines():
            if line.startswith("reasoning: "):
                last_reasoning = line[len("reasoning: "):]
        if last_reasoning:
            m = _PROPOSED_RE.search(last_reasoning)
            if m:
                return f"combine {m.group(1)} and {m.group(2)}"
        (x, y), _ = _decide(goal, inventory, _recipe_book(exemplars),
                            _fallback_rng(seed, task_key, step))
        return f"combine {x} and {y}"

    # Reasoning phase: choose the combination and spell out the product when
    # it is known, so the decision survives into stored trajectories.
    (x, y), product = _decide(goal, inventory, _recipe_book(exemplars),
                              _fallback_rng(seed, task_key, step))
    if product:
        return f"To create {product}, combine {x} and {y}."
    return f"Try to combine {x} and {y}."
