"""Run manifests: a reproducibility record written by every CLI run.

The manifest is written atomically when the run starts and rewritten with an
end timestamp and status when it exits, so a run directory always holds
exactly one manifest describing exactly one run.
"""

from __future__ import annotations

import json
import os
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

from . import __version__

MANIFEST_FILENAME = "manifest.json"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _atomic_write(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".manifest-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class RunManifest:
    def __init__(self, path: str | Path, command: list[str] | None = None,
                 config: dict | None = None, seeds: dict | None = None) -> None:
        self.path = Path(path)
        self._payload = {
            "command": command if command is not None else sys.argv,
            "config": config or {},
            "seeds": seeds or {},
            "artifacts": {},
            "tool_version": __version__,
            "started": _now(),
            "finished": None,
            "status": "running",
        }

    def start(self) -> "RunManifest":
        _atomic_write(self.path, self._payload)
        return self

    def add_artifact(self, name: str, path) -> None:
        self._payload["artifacts"][name] = str(path)

    def finalize(self, status: str = "ok", artifacts: dict | None = None) -> None:
        if artifacts:
            self._payload["artifacts"].update(artifacts)
        self._payload["finished"] = _now()
        self._payload["status"] = status
        _atomic_write(self.path, self._payload)
