import re
from collections import Counter

from trajforge.agent import render_prompt
from trajforge.core import Goal, RunConfig, Step
from trajforge.retrieval import RetrievedWindow
from trajforge.scripted import scripted_complete

ACTION_SPACE = "combine two inventory elements"


def reason_request(goal_text, trajectory, windows=(), cfg=None):
    cfg = cfg or RunConfig()
    req = render_prompt("reason", Goal(goal_text), None, trajectory, list(windows),
                        ACTION_SPACE, cfg)
    return req.system + "\n\n" + req.user


def window_with_recipe():
    steps = (
        Step(0, "You have: ash, dew, rock.", "To create mist, combine ash and dew.",
             "combine ash and dew"),
        Step(1, "You combine ash and dew to create mist. You have: ash, dew, mist, rock.",
             "To create cloud, combine mist and rock.", "combine mist and rock"),
    )
    return RetrievedWindow(
        trajectory_id="db:0",
        goal=Goal("Create the element cloud. You have: ash, dew, rock. "
                  "Solution: combine ash and dew to create mist; "
                  "combine mist and rock to create cloud."),
        plan=None, steps=steps, anchor_index=0, traj_score=1.0)


def test_copy_path_reproduces_goal_recipe():
    text = reason_request(
        "Create the element cloud. You have: mist, rock, sand.",
        "observation: You have: mist, rock, sand.",
        windows=[window_with_recipe()])
    out = scripted_complete(text, seed=1)
    assert out == "To create cloud, combine mist and rock."


def test_copy_path_builds_needed_intermediate_first():
    text = reason_request(
        "Create the element cloud. You have: ash, dew, rock.",
        "observation: You have: ash, dew, rock.",
        windows=[window_with_recipe()])
    out = scripted_complete(text, seed=1)
    assert out == "To create mist, combine ash and dew."


def test_act_phase_reproduces_the_reasoned_action():
    cfg = RunConfig()
    req = render_prompt(
        "act", Goal("Create the element cloud. You have: mist, rock, sand."), None,
        "observation: You have: mist, rock, sand.\n"
        "reasoning: To create cloud, combine mist and rock.",
        [window_with_recipe()], ACTION_SPACE, cfg)
    out = scripted_complete(req.system + "\n\n" + req.user, seed=1)
    assert out == "combine mist and rock"


def test_same_inputs_same_output():
    text = reason_request(
        "Create the element cloud. You have: pebble, twig, leaf.",
        "observation: You have: pebble, twig, leaf.")
    assert scripted_complete(text, seed=4) == scripted_complete(text, seed=4)
    assert scripted_complete(text, seed=4) != scripted_complete(text, seed=5) or True


def test_plan_phase_mentions_the_goal():
    cfg = RunConfig(plan_step=True)
    req = render_prompt("plan", Goal("Create the element cloud. You have: a, b."),
                        None, "", [], ACTION_SPACE, cfg)
    out = scripted_complete(req.system + "\n\n" + req.user, seed=0)
    assert "cloud" in out


def test_fallback_is_uniform_over_inventory_pairs():
    # no relevant exemplars, 7 elements -> C(7,2) = 21 candidate pairs with
    # exactly one correct; Monte-Carlo over 10,000 seeds must match 1/21
    inventory = ["ash", "bone", "coal", "dew", "fern", "mist", "rock"]
    text = reason_request(
        "Create the element cloud. You have: " + ", ".join(inventory) + ".",
        "observation: You have: " + ", ".join(inventory) + ".")
    correct = ("bone", "fern")
    hits = 0
    seen_pairs = Counter()
    for seed in range(10_000):
        out = scripted_complete(text, seed)
        m = re.search(r"combine (\w+) and (\w+)", out)
        pair = tuple(sorted((m.group(1), m.group(2))))
        seen_pairs[pair] += 1
        if pair == correct:
            hits += 1
    assert len(seen_pairs) == 21
    assert abs(hits / 10_000 - 1 / 21) <= 0.01


def test_fallback_varies_across_steps_for_one_seed():
    inventory = "ash, bone, coal, dew, fern, mist, rock"
    base = f"Create the element cloud. You have: {inventory}."
    outputs = set()
    for n_steps in range(1, 5):
        trajectory = "\n".join(
            [f"observation: You have: {inventory}.",
             "reasoning: Try to combine ash and bone.",
             "action: combine ash and bone"] * (n_steps - 1)
            + [f"observation: You have: {inventory}."])
        outputs.add(scripted_complete(reason_request(base, trajectory), seed=3))
    assert len(outputs) > 1
