"""Strict JSON run configuration.

The config file mirrors RunConfig field-for-field and adds environment,
backend, and embedder blocks. Unknown keys are fatal at every level:
a silently ignored typo in a research config is a classic way to ship
wrong numbers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .core import RunConfig

_RUNCONFIG_KEYS = {f.name for f in fields(RunConfig)}

_ENV_KEYS = {
    "craftworld": {"kind", "world", "initial_exemplars"},
    "external": {"kind", "command", "timeout_s"},
}
_BACKEND_KEYS = {
    "scripted": {"kind"},
    "http": {"kind", "base_url", "model", "key_env", "timeout", "retries",
             "backoff_base", "max_in_flight"},
}
_EMBEDDER_KEYS = {
    "builtin": {"kind"},
    "remote": {"kind", "base_url", "model", "key_env"},
}


@dataclass
class LoadedConfig:
    run: RunConfig
    environment: dict
    backend: dict
    embedder: dict


def _check_block(name: str, block: dict, allowed_by_kind: dict) -> dict:
    if not isinstance(block, dict):
        raise ValueError(f"config block {name!r} must be an object")
    kind = block.get("kind")
    if kind not in allowed_by_kind:
        raise ValueError(
            f"config block {name!r}: unknown kind {kind!r} "
            f"(valid: {', '.join(sorted(allowed_by_kind))})")
    unknown = set(block) - allowed_by_kind[kind]
    if unknown:
        raise ValueError(f"config block {name!r}: unknown keys {sorted(unknown)}")
    return block


def load_config(path, seed_override: Optional[int] = None) -> LoadedConfig:
    with Path(path).open(encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError("config root must be a JSON object")

    blocks = {"environment", "backend", "embedder"}
    unknown = set(raw) - _RUNCONFIG_KEYS - blocks
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)}")

    run_kwargs = {k: v for k, v in raw.items() if k in _RUNCONFIG_KEYS}
    if seed_override is not None:
        run_kwargs["seed"] = seed_override
    run = RunConfig(**run_kwargs)

    environment = _check_block("environment",
                               raw.get("environment", {"kind": "craftworld"}), _ENV_KEYS)
    backend = _check_block("backend", raw.get("backend", {"kind": "scripted"}), _BACKEND_KEYS)
    embedder = _check_block("embedder", raw.get("embedder", {"kind": "builtin"}), _EMBEDDER_KEYS)
    return LoadedConfig(run=run, environment=environment, backend=backend, embedder=embedder)
