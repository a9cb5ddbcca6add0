import sys
from pathlib import Path

import pytest

from trajforge.adapter import AdapterLost, ExternalEnvAdapter
from trajforge.agent import TERMINATED_ADAPTER_ERROR, run_episode
from trajforge.backends import ChatRequest
from trajforge.core import Goal, RunConfig, TrajectoryDatabase
from trajforge.embed import BuiltinEmbedder, EmbeddingCache
from trajforge.retrieval import Retriever

HOST = Path(__file__).parent / "stub_env_host.py"


def host_command(*extra):
    return [sys.executable, str(HOST), *extra]


def test_reset_round_trip():
    with ExternalEnvAdapter(host_command()) as env:
        assert env.reset("t1") == "a room for t1"


def test_step_round_trip():
    with ExternalEnvAdapter(host_command()) as env:
        env.reset("t1")
        obs, done, success = env.step("wait")
        assert (obs, done, success) == ("the room hums", False, False)
        obs, done, success = env.step("press button")
        assert (done, success) == (True, True)


def test_action_space_round_trip():
    with ExternalEnvAdapter(host_command()) as env:
        assert env.action_space_text() == "press button | wait"


def test_child_error_reply_raises():
    with ExternalEnvAdapter(host_command()) as env:
        env.reset("t1")
        with pytest.raises(AdapterLost, match="unknown op"):
            env._exchange({"op": "bogus"})


def test_dead_child_is_adapter_lost():
    with ExternalEnvAdapter(host_command("--die-after-reset"), timeout_s=5) as env:
        env.reset("t1")
        with pytest.raises(AdapterLost, match="exited"):
            env.step("wait")


def test_episode_records_adapter_loss_as_failure():
    class EchoBackend:
        def complete(self, req: ChatRequest, phase: str = "reason") -> str:
            return "wait"

    cfg = RunConfig(seed=0, max_steps=3)
    cache = EmbeddingCache(BuiltinEmbedder(cfg.embed_dim))
    retriever = Retriever(TrajectoryDatabase("empty"), cache)
    with ExternalEnvAdapter(host_command("--die-after-reset"), timeout_s=5) as env:
        record = run_episode("t1", Goal("push the button"), env, retriever,
                             EchoBackend(), cfg)
    assert record.success is False
    assert record.terminated_by == TERMINATED_ADAPTER_ERROR
