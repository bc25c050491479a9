"""Wire protocol shared by gateway, agent, and hub.

Newline-delimited JSON over a reliable ordered byte stream, UTF-8, one
object per line. Roll-up envelopes use a canonical fixed-width encoding
(space-padded numerics, 4-decimal rates) so their byte size depends only
on bay count, window count, and field widths, never on event counts.
"""

from __future__ import annotations

import json
from typing import Any, Mapping, Sequence

from .occupancy import InvariantViolationError, RollupRecord

PROTO_VERSION = 1

WIRE_STATUSES = ("occupied", "free")


class ProtocolError(ValueError):
    """A wire message is malformed or violates its schema."""


def encode_line(message: Mapping[str, Any]) -> bytes:
    return json.dumps(message, separators=(",", ":"), sort_keys=True).encode("utf-8") + b"\n"


def decode_line(raw: bytes | str) -> dict[str, Any]:
    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError(f"line is not valid UTF-8: {exc}") from exc
    try:
        message = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"line is not valid JSON: {exc}") from exc
    if not isinstance(message, dict) or not isinstance(message.get("type"), str):
        raise ProtocolError("message must be a JSON object with a string 'type'")
    return message


def message_size(message: Mapping[str, Any]) -> int:
    """Serialized size in bytes, newline included."""
    return len(encode_line(message))


# ---------------------------------------------------------------------------
# Message constructors


def hello_message(client: str) -> dict[str, Any]:
    return {"type": "hello", "client": client, "proto": PROTO_VERSION}


def bays_message(lot_id: str, statuses: Sequence[tuple[int, str]]) -> dict[str, Any]:
    """Snapshot of one parking lot; data stays a list for schema fidelity."""
    return {
        "type": "bays",
        "data": [
            {
                "lotId": lot_id,
                "bays": [{"id": bay_id, "status": status} for bay_id, status in statuses],
            }
        ],
    }


def bays_update_message(lot_id: str, bay_id: int, status: str) -> dict[str, Any]:
    return {"type": "baysUpdate", "lotId": lot_id, "bay": {"id": bay_id, "status": status}}


def ping_message(seq: int) -> dict[str, Any]:
    return {"type": "ping", "seq": seq}


def pong_message(seq: int) -> dict[str, Any]:
    return {"type": "pong", "seq": seq}


def error_message(reason: str) -> dict[str, Any]:
    return {"type": "error", "reason": reason}


def ack_message(key: str) -> dict[str, Any]:
    return {"type": "ack", "key": key}


def not_found_message() -> dict[str, Any]:
    return {"type": "notFound"}


def query_daily_message(lot_id: str, window_start: int) -> dict[str, Any]:
    return {"type": "queryDaily", "lotId": lot_id, "windowStart": window_start}


def query_weekly_message(lot_id: str, week_start: int) -> dict[str, Any]:
    return {"type": "queryWeekly", "lotId": lot_id, "weekStart": week_start}


def record_to_wire(record: RollupRecord) -> dict[str, Any]:
    return {
        "bayId": record.bay_id,
        "occupationTime": record.occupation_time_sec,
        "occupationRate": record.occupation_rate,
    }


def daily_message(records: Sequence[RollupRecord]) -> dict[str, Any]:
    return {"type": "daily", "records": [record_to_wire(r) for r in records]}


def envelope_key(lot_id: str, window_start: int) -> str:
    return f"{lot_id}:{window_start}"


def encode_rollup_envelope(
    lot_id: str,
    window_start: int,
    window_end: int,
    records: Sequence[RollupRecord],
) -> bytes:
    """Canonical fixed-width roll-up upload line.

    Numeric fields are space-padded (legal JSON whitespace) so the byte
    length is a function of bay ids, the window length, and the record
    count only.
    """
    bay_width = max((len(str(r.bay_id)) for r in records), default=1)
    time_width = len(str(max(1, (window_end - window_start) // 1000)))
    parts = [
        '{{"bayId":{bay:>{bw}d},"occupationTime":{sec:>{tw}d},"occupationRate":{rate:.4f}}}'.format(
            bay=r.bay_id, bw=bay_width, sec=r.occupation_time_sec, tw=time_width,
            rate=r.occupation_rate,
        )
        for r in records
    ]
    line = (
        '{{"type":"rollup","key":"{key}","lotId":"{lot}",'
        '"windowStart":{ws},"windowEnd":{we},"records":[{recs}]}}'
    ).format(
        key=envelope_key(lot_id, window_start),
        lot=lot_id,
        ws=window_start,
        we=window_end,
        recs=",".join(parts),
    )
    return line.encode("utf-8") + b"\n"


def _require(condition: bool, reason: str) -> None:
    if not condition:
        raise ProtocolError(reason)


def parse_wire_records(raw_records: Any, window_sec: int) -> list[RollupRecord]:
    _require(isinstance(raw_records, list), "records must be a list")
    records: list[RollupRecord] = []
    last_bay = 0
    for raw in raw_records:
        _require(isinstance(raw, dict), "record must be an object")
        bay_id = raw.get("bayId")
        sec = raw.get("occupationTime")
        rate = raw.get("occupationRate")
        _require(isinstance(bay_id, int) and bay_id >= 1, "bayId must be a positive integer")
        _require(isinstance(sec, int) and sec >= 0, "occupationTime must be a non-negative integer")
        _require(sec <= window_sec, f"occupationTime {sec} exceeds window {window_sec} s")
        _require(isinstance(rate, (int, float)) and 0.0 <= float(rate) <= 1.0,
                 "occupationRate must be within [0, 1]")
        _require(bay_id > last_bay, "records must be sorted by ascending bayId")
        last_bay = bay_id
        try:
            records.append(RollupRecord(bay_id, sec, float(rate)))
        except InvariantViolationError as exc:
            raise ProtocolError(str(exc)) from exc
    return records


def parse_rollup_envelope(message: Mapping[str, Any]) -> dict[str, Any]:
    """Validate a rollup upload; returns the normalized fields.

    Raises ProtocolError on any schema violation.
    """
    _require(message.get("type") == "rollup", "type must be 'rollup'")
    lot_id = message.get("lotId")
    ws = message.get("windowStart")
    we = message.get("windowEnd")
    key = message.get("key")
    _require(isinstance(lot_id, str) and bool(lot_id), "lotId must be a non-empty string")
    _require(isinstance(ws, int) and isinstance(we, int), "window bounds must be integers")
    _require(we > ws, "windowEnd must exceed windowStart")
    _require(key == envelope_key(lot_id, ws), "key must be '<lotId>:<windowStart>'")
    records = parse_wire_records(message.get("records"), (we - ws) // 1000)
    return {
        "key": key,
        "lotId": lot_id,
        "windowStart": ws,
        "windowEnd": we,
        "records": records,
    }


def parse_bays_snapshot(message: Mapping[str, Any]) -> list[tuple[str, int, str]]:
    """Flatten a 'bays' snapshot into (lot_id, bay_id, status) triples."""
    _require(message.get("type") == "bays", "type must be 'bays'")
    data = message.get("data")
    _require(isinstance(data, list), "data must be a list of parking lots")
    triples: list[tuple[str, int, str]] = []
    for lot in data:
        _require(isinstance(lot, dict), "parking lot entry must be an object")
        lot_id = lot.get("lotId")
        bays = lot.get("bays")
        _require(isinstance(lot_id, str) and bool(lot_id), "lotId must be a non-empty string")
        _require(isinstance(bays, list), "bays must be a list")
        for bay in bays:
            _require(isinstance(bay, dict), "bay entry must be an object")
            bay_id = bay.get("id")
            status = bay.get("status")
            _require(isinstance(bay_id, int) and bay_id >= 1, "bay id must be a positive integer")
            _require(status in WIRE_STATUSES, f"bay status must be one of {WIRE_STATUSES}")
            triples.append((lot_id, bay_id, status))
    return triples


def parse_bays_update(message: Mapping[str, Any]) -> tuple[str, int, str]:
    _require(message.get("type") == "baysUpdate", "type must be 'baysUpdate'")
    lot_id = message.get("lotId")
    bay = message.get("bay")
    _require(isinstance(lot_id, str) and bool(lot_id), "lotId must be a non-empty string")
    _require(isinstance(bay, dict), "bay must be an object")
    bay_id = bay.get("id")
    status = bay.get("status")
    _require(isinstance(bay_id, int) and bay_id >= 1, "bay id must be a positive integer")
    _require(status in WIRE_STATUSES, f"bay status must be one of {WIRE_STATUSES}")
    return lot_id, bay_id, status
