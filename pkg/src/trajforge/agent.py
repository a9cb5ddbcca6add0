"""The retrieval-augmented plan/reason/act agent loop.

One episode: optionally generate a high-level plan (retrieving exemplars by
goal), then alternate reasoning and acting until the environment reports
done or the step budget runs out. Retrieval is re-run before every single
generation. The first step keys state-level retrieval on the initial
observation; every later retrieval keys on generated reasoning, which
generalizes across tasks better than raw observations do.

Prompt templates are deliberately minimalist and task-agnostic; the only
task-specific knowledge an agent sees is the content of the retrieved
examples and the action-space string.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

from .adapter import AdapterLost
from .backends import BackendError, ChatRequest
from .core import Goal, RunConfig, Step
from .envs import Environment
from .retrieval import (
    ROLE_CATEGORY,
    ROLE_GOAL,
    ROLE_OBSERVATION,
    ROLE_REASONING,
    QueryKeys,
    RetrievalTrace,
    RetrievedWindow,
    Retriever,
    retrieve_for_decision,
)

logger = logging.getLogger(__name__)

PLAN_SYSTEM_TEMPLATE = (
    "You are an expert at generating high-level plans of actions to achieve a goal.\n"
    " Here is your action space: {action_space}.\n"
    " Here are some examples of goal,plan from episodes that successfully achieved"
    " similar goals: {examples}"
)
PLAN_USER_TEMPLATE = "goal: {goal}\n plan: "

REASON_SYSTEM_TEMPLATE = (
    "You are an expert at reasoning about the most appropriate action to take towards"
    " achieving a goal.\n"
    " Here is your action space: {action_space}.\n"
    " Here are some examples of goal,plan,observation,reasoning,action from episodes"
    " that successfully achieved similar goals: {examples}"
)
REASON_USER_TEMPLATE = "goal: {goal}\n plan: {plan}\n trajectory: {trajectory}\n reasoning: "

ACT_SYSTEM_TEMPLATE = (
    "You are an agent in an environment. Given the current observation, you must select"
    " an action to take towards achieving the goal: {goal}.\n"
    " Here is your action space: {action_space}.\n"
    " Here are some examples of goal,plan,observation,reasoning,action from episodes"
    " that successfully achieved similar goals: {examples}"
)
ACT_USER_TEMPLATE = "goal: {goal}\n plan: {plan}\n trajectory: {trajectory}\n action: "

# Prompts render at most this many trailing steps of the live trajectory.
TRAJECTORY_RENDER_LIMIT = 8

TERMINATED_ENV_DONE = "env_done"
TERMINATED_TIMEOUT = "timeout"
TERMINATED_ADAPTER_ERROR = "adapter_error"


@dataclass
class EpisodeRecord:
    """One agent-environment rollout with its retrieval and call accounting."""

    task_id: str
    goal: Goal
    plan: Optional[str]
    steps: tuple[Step, ...]
    success: bool
    retrieval_trace: dict[str, int]
    llm_calls: dict[str, int]
    terminated_by: str

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "goal": self.goal.to_dict(),
            "plan": self.plan,
            "steps": [s.to_dict() for s in self.steps],
            "success": self.success,
            "retrieval_trace": dict(self.retrieval_trace),
            "llm_calls": dict(self.llm_calls),
            "terminated_by": self.terminated_by,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeRecord":
        return cls(
            task_id=d["task_id"],
            goal=Goal.from_dict(d["goal"]),
            plan=d.get("plan"),
            steps=tuple(Step.from_dict(s) for s in d["steps"]),
            success=d["success"],
            retrieval_trace=dict(d["retrieval_trace"]),
            llm_calls=dict(d["llm_calls"]),
            terminated_by=d["terminated_by"],
        )


def format_example(window: RetrievedWindow, phase: str) -> str:
    """Render one retrieved window in the format the prompt announces.

    Plan phase examples are goal,plan pairs; reason/act examples are
    goal,plan,observation,reasoning,action tuples. Windows without a plan
    simply omit the plan line.
    """
    lines = [f"goal: {window.goal.text}"]
    if window.plan is not None:
        lines.append(f"plan: {window.plan}")
    if phase != "plan":
        for step in window.steps:
            lines.append(f"observation: {step.observation}")
            lines.append(f"reasoning: {step.reasoning}")
            lines.append(f"action: {step.action}")
    return "\n".join(lines)


def format_examples(windows: list[RetrievedWindow], phase: str) -> str:
    """Concatenate examples in retrieval order, separated by blank lines."""
    return "\n\n".join(format_example(w, phase) for w in windows)


def render_trajectory(steps: tuple[Step, ...], current_observation: str,
                      current_reasoning: Optional[str] = None) -> str:
    """Render the live trajectory plus the pending observation (and reasoning)."""
    lines = []
    for step in steps[-TRAJECTORY_RENDER_LIMIT:]:
        lines.append(f"observation: {step.observation}")
        lines.append(f"reasoning: {step.reasoning}")
        lines.append(f"action: {step.action}")
    lines.append(f"observation: {current_observation}")
    if current_reasoning is not None:
        lines.append(f"reasoning: {current_reasoning}")
    return "\n".join(lines)


def render_prompt(phase: str, goal: Goal, plan: Optional[str], trajectory: str,
                  windows: list[RetrievedWindow], action_space: str,
                  cfg: RunConfig) -> ChatRequest:
    """Substitute the fixed templates for one generation."""
    examples = format_examples(windows, phase)
    plan_text = plan if plan is not None else ""
    if phase == "plan":
        system = PLAN_SYSTEM_TEMPLATE.format(action_space=action_space, examples=examples)
        user = PLAN_USER_TEMPLATE.format(goal=goal.text)
    elif phase == "reason":
        system = REASON_SYSTEM_TEMPLATE.format(action_space=action_space, examples=examples)
        user = REASON_USER_TEMPLATE.format(goal=goal.text, plan=plan_text, trajectory=trajectory)
    elif phase == "act":
        system = ACT_SYSTEM_TEMPLATE.format(
            goal=goal.text, action_space=action_space, examples=examples)
        user = ACT_USER_TEMPLATE.format(goal=goal.text, plan=plan_text, trajectory=trajectory)
    else:
        raise ValueError(f"unknown phase {phase!r}")
    return ChatRequest(system=system, user=user, temperature=cfg.temperature)


def _clean_action(raw: str) -> str:
    """Environments expect single commands; keep only the first line."""
    return raw.strip().splitlines()[0].strip() if raw.strip() else ""


def run_episode(task_id: str, goal: Goal, env: Environment, retriever: Retriever,
                backend, cfg: RunConfig) -> EpisodeRecord:
    """Run one episode of the plan/reason/act loop and record everything.

    Retrieval happens before every generation: once for the plan (when
    enabled) and twice per step. Step 1 keys both its retrievals on the
    initial observation; later steps key the reasoning generation on the
    previous step's reasoning and the action generation on the fresh one.
    """
    trace = RetrievalTrace()
    llm_calls = {"plan": 0, "reason": 0, "act": 0}
    steps: list[Step] = []
    plan: Optional[str] = None
    action_space = env.action_space_text()
    observation = env.reset(task_id)

    def aborted() -> EpisodeRecord:
        return EpisodeRecord(
            task_id=task_id, goal=goal, plan=plan, steps=tuple(steps), success=False,
            retrieval_trace=trace.as_dict(), llm_calls=llm_calls,
            terminated_by=TERMINATED_ADAPTER_ERROR)

    try:
        if cfg.plan_step:
            traj_keys = {ROLE_GOAL: goal.text}
            if goal.category is not None:
                traj_keys[ROLE_CATEGORY] = goal.category
            windows = retriever.retrieve(
                QueryKeys(traj_keys=traj_keys), cfg.k_retrieve, cfg.window_size)
            trace.record(w.trajectory_id for w in windows)
            request = render_prompt("plan", goal, None, "", windows, action_space, cfg)
            llm_calls["plan"] += 1
            plan = backend.complete(request, "plan").strip()

        previous_reasoning: Optional[str] = None
        for t in range(1, cfg.max_steps + 1):
            if t == 1:
                reason_key = (ROLE_OBSERVATION, observation)
            else:
                reason_key = (ROLE_REASONING, previous_reasoning)
            windows, _ = retrieve_for_decision(
                retriever, goal, plan, reason_key[1], reason_key[0], cfg, trace)
            trajectory = render_trajectory(tuple(steps), observation)
            request = render_prompt("reason", goal, plan, trajectory, windows,
                                    action_space, cfg)
            llm_calls["reason"] += 1
            reasoning = backend.complete(request, "reason").strip()

            if t == 1:
                act_key = (ROLE_OBSERVATION, observation)
            else:
                act_key = (ROLE_REASONING, reasoning)
            windows, _ = retrieve_for_decision(
                retriever, goal, plan, act_key[1], act_key[0], cfg, trace)
            trajectory = render_trajectory(tuple(steps), observation, reasoning)
            request = render_prompt("act", goal, plan, trajectory, windows,
                                    action_space, cfg)
            llm_calls["act"] += 1
            action = _clean_action(backend.complete(request, "act"))

            next_observation, done, success = env.step(action)
            steps.append(Step(index=t - 1, observation=observation,
                              reasoning=reasoning, action=action))
            previous_reasoning = reasoning
            observation = next_observation
            if done:
                return EpisodeRecord(
                    task_id=task_id, goal=goal, plan=plan, steps=tuple(steps),
                    success=success, retrieval_trace=trace.as_dict(),
                    llm_calls=llm_calls, terminated_by=TERMINATED_ENV_DONE)
    except BackendError as exc:
        logger.warning("episode %s aborted by backend failure: %s", task_id, exc)
        return aborted()
    except AdapterLost as exc:
        logger.warning("episode %s lost its environment adapter: %s", task_id, exc)
        return aborted()

    return EpisodeRecord(
        task_id=task_id, goal=goal, plan=plan, steps=tuple(steps), success=False,
        retrieval_trace=trace.as_dict(), llm_calls=llm_calls,
        terminated_by=TERMINATED_TIMEOUT)
