"""Append-only run manifests with content-hash chaining.

Every CLI run appends exactly one manifest record to ``manifests.jsonl``
in the output directory. Each record carries the SHA-256 of the previous
record, so the sequence of runs that produced a set of artifacts can be
verified after the fact.
"""

from __future__ import annotations

import hashlib
import json
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError

MANIFEST_NAME = "manifests.jsonl"


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    seed: int
    git_describe: str
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    wall_clock_s: float = 0.0
    exit_status: int = 0
    prev_hash: str = ""

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config_path": self.config_path,
            "seed": self.seed,
            "git_describe": self.git_describe,
            "inputs": list(self.inputs),
            "outputs": list(self.outputs),
            "wall_clock_s": self.wall_clock_s,
            "exit_status": self.exit_status,
            "prev_hash": self.prev_hash,
        }


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _record_hash(line: str) -> str:
    return hashlib.sha256(line.encode()).hexdigest()


def append_manifest(out_dir: str | Path, manifest: RunManifest) -> Path:
    """Append the record, chaining it to the previous one by hash."""
    path = Path(out_dir) / MANIFEST_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    prev = ""
    if path.exists():
        lines = [l for l in path.read_text().splitlines() if l.strip()]
        if lines:
            prev = _record_hash(lines[-1])
    manifest.prev_hash = prev
    with open(path, "a") as f:
        f.write(json.dumps(manifest.to_dict(), sort_keys=True) + "\n")
    return path


def read_manifests(out_dir: str | Path) -> list[dict]:
    path = Path(out_dir) / MANIFEST_NAME
    if not path.exists():
        return []
    records = []
    for i, line in enumerate(l for l in path.read_text().splitlines() if l.strip()):
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise DataError(f"{path}:{i + 1}: corrupt manifest record: {e}") from e
    return records


def verify_chain(out_dir: str | Path) -> bool:
    """Check every record's prev_hash matches the preceding record."""
    path = Path(out_dir) / MANIFEST_NAME
    if not path.exists():
        return True
    lines = [l for l in path.read_text().splitlines() if l.strip()]
    prev = ""
    for i, line in enumerate(lines):
        rec = json.loads(line)
        if rec.get("prev_hash", "") != prev:
            return False
        prev = _record_hash(line)
    return True
