"""Run manifests: every CLI command records what it did next to its outputs.

A manifest holds the exact argument vector plus the resolved configuration,
so `rerun <manifest>` reproduces the outputs bit-for-bit (timestamps aside).
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

from .errors import ConfigError

CODE_VERSION = "0.1.0"


def atomic_write(path, text: str):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    resolved: dict
    seed: int | None = None
    code_version: str = CODE_VERSION
    started: str = field(default_factory=_now)
    finished: str = ""
    outputs: list[str] = field(default_factory=list)

    def finish(self, outputs: list[str]):
        self.finished = _now()
        self.outputs = [os.path.abspath(p) for p in outputs]

    def save(self, path):
        atomic_write(path, json.dumps(asdict(self), indent=2))

    @staticmethod
    def load(path) -> "RunManifest":
        with open(path) as f:
            raw = json.load(f)
        try:
            return RunManifest(**raw)
        except TypeError as e:
            raise ConfigError(f"malformed manifest: {e}") from e


def write_manifest(out_dir, manifest: RunManifest) -> str:
    path = os.path.join(out_dir, f"manifest_{manifest.command}.json")
    manifest.save(path)
    return path
