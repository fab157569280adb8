"""Newline-delimited JSON training telemetry.

One record per (epoch, split) with loss, accuracy, macro F1, the learning
rate in effect and wall time. A sink that stops accepting writes degrades to
a single warning; training never aborts over telemetry.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

log = logging.getLogger(__name__)

EVENTS_FILENAME = "events.ndjson"


class EventLog:
    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._warned = False

    def emit(self, record: dict) -> None:
        try:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")
        except OSError as exc:
            if not self._warned:
                log.warning("event log %s is not writable (%s); continuing without telemetry",
                            self.path, exc)
                self._warned = True


def read_events(path: str | Path) -> list[dict]:
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
