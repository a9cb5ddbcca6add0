"""Run manifests: what a run produced, with content hashes.

A manifest pins the config snapshot, seeds, per-phase LLM call counts, wall
time, and a hash inventory of every file the run wrote, so a finished run
can be audited (or a --dry-run re-invocation can verify nothing rotted).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

MANIFEST_NAME = "manifest.json"


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    run_id: str
    cfg: dict
    seed: int
    llm_calls: dict
    wall_time_s: float
    files: dict = field(default_factory=dict)  # relative path -> sha256

    def add_file(self, out_dir, relative: str) -> None:
        self.files[relative] = file_sha256(Path(out_dir) / relative)

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        payload = {
            "run_id": self.run_id,
            "cfg": self.cfg,
            "seed": self.seed,
            "llm_calls": self.llm_calls,
            "wall_time_s": self.wall_time_s,
            "files": self.files,
        }
        with path.open("w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def verify_manifest(out_dir) -> list[str]:
    """Re-hash every file a manifest references; return mismatch messages."""
    path = Path(out_dir) / MANIFEST_NAME
    with path.open(encoding="utf-8") as fh:
        payload = json.load(fh)
    problems = []
    for relative, expected in sorted(payload.get("files", {}).items()):
        target = Path(out_dir) / relative
        if not target.exists():
            problems.append(f"{relative}: missing")
        elif file_sha256(target) != expected:
            problems.append(f"{relative}: hash mismatch")
    return problems
