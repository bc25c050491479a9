"""Append-only JSON-lines event log with flush and disconnect markers.

Line shapes:
  event       {"ts":..,"lotId":"..","bayId":..,"status":"occupied"|"free"|"unknown","src":"snapshot"|"update"}
              plus "rejected":true for events refused by the state machine
  flush       {"ts":<boundary>,"marker":"flush","windowStart":<completed window start>}
  disconnect  {"ts":..,"marker":"disconnect"}

Events are written before the state mutation they describe (write-ahead),
so replaying a log through the state machine reproduces the live table.
A torn final line is tolerated on read.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Any

from .occupancy import BayStatus, EventKind, OccupancyEvent

log = logging.getLogger(__name__)

MARKER_FLUSH = "flush"
MARKER_DISCONNECT = "disconnect"


def event_record(event: OccupancyEvent, *, rejected: bool = False) -> dict[str, Any]:
    record: dict[str, Any] = {
        "ts": event.ts,
        "lotId": event.lot_id,
        "bayId": event.bay_id,
        "status": event.status.value,
        "src": event.kind.value,
    }
    if rejected:
        record["rejected"] = True
    return record


def flush_record(ts: int, window_start: int) -> dict[str, Any]:
    return {"ts": ts, "marker": MARKER_FLUSH, "windowStart": window_start}


def disconnect_record(ts: int) -> dict[str, Any]:
    return {"ts": ts, "marker": MARKER_DISCONNECT}


def is_marker(record: dict[str, Any]) -> bool:
    return "marker" in record


def record_to_event(record: dict[str, Any]) -> OccupancyEvent:
    return OccupancyEvent(
        kind=EventKind(record["src"]),
        ts=int(record["ts"]),
        lot_id=str(record["lotId"]),
        bay_id=int(record["bayId"]),
        status=BayStatus(record["status"]),
    )


class EventLogWriter:
    """Appends one JSON object per line, flushed per append."""

    def __init__(self, path: str | Path, *, fsync: bool = False) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fsync = fsync
        self._fh = open(self.path, "ab")

    def append(self, record: dict[str, Any]) -> None:
        line = json.dumps(record, separators=(",", ":"), sort_keys=True).encode("utf-8")
        self._fh.write(line + b"\n")
        self._fh.flush()
        if self._fsync:
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()


def read_records(path: str | Path) -> tuple[list[dict[str, Any]], int]:
    """Read all decodable records; returns (records, skipped line count).

    An unterminated or undecodable final line is a torn tail and is
    dropped; undecodable interior lines are skipped too, both counted.
    """
    path = Path(path)
    records: list[dict[str, Any]] = []
    skipped = 0
    if not path.exists():
        return records, skipped
    raw = path.read_bytes()
    if not raw:
        return records, skipped
    lines = raw.split(b"\n")
    trailing = lines.pop() if lines else b""
    if trailing:
        skipped += 1
        log.warning("%s: discarding torn final line (%d bytes)", path, len(trailing))
    for lineno, line in enumerate(lines, start=1):
        if not line:
            continue
        try:
            record = json.loads(line)
            if not isinstance(record, dict):
                raise ValueError("log line is not an object")
            records.append(record)
        except ValueError as exc:
            skipped += 1
            log.warning("%s:%d: skipping undecodable line: %s", path, lineno, exc)
    return records, skipped


def last_flush_index(records: list[dict[str, Any]]) -> int | None:
    for i in range(len(records) - 1, -1, -1):
        if records[i].get("marker") == MARKER_FLUSH:
            return i
    return None
