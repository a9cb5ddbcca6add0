"""Wire adapter for external environment hosts.

A child process speaking newline-delimited JSON on stdin/stdout can expose
any real benchmark environment to the agent. One JSON object per line,
UTF-8. Parent -> child ops: {"op":"reset","task_id":s}, {"op":"step",
"action":s}, {"op":"action_space"}, {"op":"shutdown"}. Child -> parent:
{"observation":s} | {"observation":s,"done":b,"success":b} |
{"action_space":s} | {"error":s}. A dead child, a malformed line, or a 30s
silence aborts the episode, which is then recorded as a failure.
"""

from __future__ import annotations

import json
import logging
import queue
import subprocess
import threading
from typing import Optional

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 30.0


class AdapterLost(Exception):
    """The external environment process is gone or spoke garbage."""


class ExternalEnvAdapter:
    """Environment implementation backed by a subprocess."""

    def __init__(self, command: list[str], timeout_s: float = DEFAULT_TIMEOUT_S):
        self.command = list(command)
        self.timeout_s = timeout_s
        self._proc: Optional[subprocess.Popen] = None
        self._lines: "queue.Queue[Optional[str]]" = queue.Queue()

    def _ensure_started(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            return
        self._proc = subprocess.Popen(
            self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            text=True, bufsize=1)
        self._lines = queue.Queue()
        thread = threading.Thread(target=self._pump, args=(self._proc,), daemon=True)
        thread.start()

    def _pump(self, proc: subprocess.Popen) -> None:
        assert proc.stdout is not None
        for line in proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _exchange(self, message: dict) -> dict:
        self._ensure_started()
        proc = self._proc
        assert proc is not None and proc.stdin is not None
        try:
            proc.stdin.write(json.dumps(message) + "\n")
            proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise AdapterLost(f"adapter_lost: write failed ({exc})") from None
        try:
            line = self._lines.get(timeout=self.timeout_s)
        except queue.Empty:
            raise AdapterLost("adapter_lost: timeout waiting for reply") from None
        if line is None:
            raise AdapterLost("adapter_lost: child process exited")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise AdapterLost(f"adapter_lost: malformed line ({exc})") from None
        if "error" in reply:
            raise AdapterLost(f"adapter_lost: child reported error: {reply['error']}")
        return reply

    def reset(self, task_id: str) -> str:
        reply = self._exchange({"op": "reset", "task_id": task_id})
        if "observation" not in reply:
            raise AdapterLost("adapter_lost: reset reply missing observation")
        return reply["observation"]

    def step(self, action: str) -> tuple[str, bool, bool]:
        reply = self._exchange({"op": "step", "action": action})
        try:
            return reply["observation"], bool(reply["done"]), bool(reply["success"])
        except KeyError as exc:
            raise AdapterLost(f"adapter_lost: step reply missing {exc}") from None

    def action_space_text(self) -> str:
        reply = self._exchange({"op": "action_space"})
        if "action_space" not in reply:
            raise AdapterLost("adapter_lost: reply missing action_space")
        return reply["action_space"]

    def shutdown(self) -> None:
        if self._proc is None or self._proc.poll() is not None:
            return
        try:
            assert self._proc.stdin is not None
            self._proc.stdin.write(json.dumps({"op": "shutdown"}) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError):
            pass
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()

    def __enter__(self) -> "ExternalEnvAdapter":
        self._ensure_started()
        return self

    def __exit__(self, *exc_info) -> None:
        self.shutdown()
