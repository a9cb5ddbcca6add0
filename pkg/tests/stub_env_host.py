"""Minimal external-environment host used by adapter tests.

Speaks the newline-delimited JSON protocol on stdin/stdout. The fake task
succeeds when the agent sends the action "press button"; any other action
wastes one of three steps. Passing --die-after-reset makes the process exit
right after answering a reset, simulating a crashed host.
"""

import json
import sys


def main() -> int:
    die_after_reset = "--die-after-reset" in sys.argv
    steps_left = 0
    for line in sys.stdin:
        message = json.loads(line)
        op = message.get("op")
        if op == "reset":
            steps_left = 3
            print(json.dumps({"observation": f"a room for {message['task_id']}"}), flush=True)
            if die_after_reset:
                return 0
        elif op == "step":
            steps_left -= 1
            success = message.get("action") == "press button"
            done = success or steps_left <= 0
            print(json.dumps({"observation": "the room hums",
                              "done": done, "success": success}), flush=True)
        elif op == "action_space":
            print(json.dumps({"action_space": "press button | wait"}), flush=True)
        elif op == "shutdown":
            return 0
        else:
            print(json.dumps({"error": f"unknown op {op!r}"}), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
