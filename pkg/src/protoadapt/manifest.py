"""Run manifests: enough context to reproduce an output byte-for-byte.

A manifest names the command, the fully resolved configuration (every value
that affects results, defaults included), the seeds, and a digest of each
input file. Re-running the same command with the same inputs regenerates
identical outputs, so the manifest doubles as a provenance record.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .errors import FormatError


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: dict
    inputs: dict[str, str] = field(default_factory=dict)
    artifact_version: str = __version__

    def as_dict(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "artifact_version": self.artifact_version,
        }


def write_manifest(path, manifest: RunManifest) -> None:
    Path(path).write_text(json.dumps(manifest.as_dict(), indent=2, sort_keys=True) + "\n")


def load_manifest(path) -> RunManifest:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: manifest is not valid JSON ({e})") from e
    for key in ("command", "config", "seeds"):
        if key not in payload:
            raise FormatError(f"{path}: manifest missing {key!r}")
    return RunManifest(
        command=payload["command"],
        config=payload["config"],
        seeds=payload["seeds"],
        inputs=payload.get("inputs", {}),
        artifact_version=payload.get("artifact_version", "unknown"),
    )
