"""Cloud hub: deduplicating roll-up store plus daily/weekly report queries.

Persistence is one append-only JSON-lines file per lot with an in-memory
key index rebuilt on startup. A record is durable on disk before its ack
is sent, so an acked upload survives a hub restart; duplicate deliveries
of one idempotency key are acked but stored once.
"""

from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from . import protocol
from .clock import RealScheduler, VirtualScheduler
from .occupancy import RollupRecord

log = logging.getLogger(__name__)

MS_PER_DAY = 86_400_000
HOURS_PER_DAY = 24.0

_LOT_ID_RE = re.compile(r"^[A-Za-z0-9_.-]+$")


@dataclass(frozen=True)
class StoredRollup:
    key: str
    lot_id: str
    window_start: int
    window_end: int
    records: tuple[RollupRecord, ...]
    received_at: int


@dataclass(frozen=True)
class WeeklyReport:
    """Per-day fleet averages plus per-bay extremes over one week.

    Days with no stored roll-up are None in the per-day series and are
    excluded from the per-bay min/max (absence of data is not an empty lot).
    """

    lot_id: str
    week_start: int
    per_day_fleet_avg_hours: tuple[float | None, ...]
    per_bay_min_hours: dict[int, float]
    per_bay_max_hours: dict[int, float]


def fleet_average_hours(records: tuple[RollupRecord, ...] | list[RollupRecord]) -> float:
    """Mean occupied hours per bay for one stored window."""
    if not records:
        return 0.0
    return sum(r.occupation_time_sec for r in records) / len(records) / 3600.0


class RollupStore:
    """Durable, deduplicating storage of uploaded roll-ups."""

    def __init__(self, store_dir: str | Path, *, fsync: bool = True) -> None:
        self.store_dir = Path(store_dir)
        self.store_dir.mkdir(parents=True, exist_ok=True)
        self._fsync = fsync
        self._by_key: dict[str, StoredRollup] = {}
        self._load()

    def _load(self) -> None:
        for path in sorted(self.store_dir.glob("*.jsonl")):
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    row = json.loads(line)
                    stored = StoredRollup(
                        key=row["key"],
                        lot_id=row["lotId"],
                        window_start=int(row["windowStart"]),
                        window_end=int(row["windowEnd"]),
                        records=tuple(
                            RollupRecord(
                                int(r["bayId"]),
                                int(r["occupationTime"]),
                                float(r["occupationRate"]),
                            )
                            for r in row["records"]
                        ),
                        received_at=int(row["receivedAt"]),
                    )
                    self._by_key[stored.key] = stored
        if self._by_key:
            log.info("rollup store: rebuilt index with %d records", len(self._by_key))

    def receive(self, envelope: dict[str, Any], received_at: int) -> bool:
        """Persist a validated envelope; returns False for a duplicate key."""
        key = envelope["key"]
        if key in self._by_key:
            return False
        stored = StoredRollup(
            key=key,
            lot_id=envelope["lotId"],
            window_start=envelope["windowStart"],
            window_end=envelope["windowEnd"],
            records=tuple(envelope["records"]),
            received_at=received_at,
        )
        row = {
            "key": stored.key,
            "lotId": stored.lot_id,
            "windowStart": stored.window_start,
            "windowEnd": stored.window_end,
            "records": [protocol.record_to_wire(r) for r in stored.records],
            "receivedAt": stored.received_at,
        }
        path = self.store_dir / f"{stored.lot_id}.jsonl"
        with open(path, "ab") as fh:
            fh.write(json.dumps(row, separators=(",", ":"), sort_keys=True).encode("utf-8") + b"\n")
            fh.flush()
            if self._fsync:
                os.fsync(fh.fileno())
        self._by_key[stored.key] = stored
        return True

    def get(self, key: str) -> StoredRollup | None:
        return self._by_key.get(key)

    def query_daily(self, lot_id: str, window_start: int) -> tuple[RollupRecord, ...] | None:
        stored = self._by_key.get(protocol.envelope_key(lot_id, window_start))
        return stored.records if stored is not None else None

    def weekly_report(self, lot_id: str, week_start: int) -> WeeklyReport | None:
        """Aggregate the seven day-windows starting at week_start."""
        per_day: list[float | None] = []
        per_bay_hours: dict[int, list[float]] = {}
        seen_any = False
        for day in range(7):
            records = self.query_daily(lot_id, week_start + day * MS_PER_DAY)
            if records is None:
                per_day.append(None)
                continue
            seen_any = True
            per_day.append(fleet_average_hours(records))
            for r in records:
                per_bay_hours.setdefault(r.bay_id, []).append(r.occupation_time_sec / 3600.0)
        if not seen_any:
            return None
        return WeeklyReport(
            lot_id=lot_id,
            week_start=week_start,
            per_day_fleet_avg_hours=tuple(per_day),
            per_bay_min_hours={b: min(h) for b, h in sorted(per_bay_hours.items())},
            per_bay_max_hours={b: max(h) for b, h in sorted(per_bay_hours.items())},
        )

    def lots(self) -> list[str]:
        return sorted({s.lot_id for s in self._by_key.values()})

    def windows_for(self, lot_id: str) -> list[StoredRollup]:
        rows = [s for s in self._by_key.values() if s.lot_id == lot_id]
        rows.sort(key=lambda s: s.window_start)
        return rows

    def __len__(self) -> int:
        return len(self._by_key)


def weekly_to_wire(report: WeeklyReport) -> dict[str, Any]:
    return {
        "type": "weekly",
        "lotId": report.lot_id,
        "weekStart": report.week_start,
        "perDayFleetAvgHours": list(report.per_day_fleet_avg_hours),
        "perBayMinHours": {str(b): h for b, h in report.per_bay_min_hours.items()},
        "perBayMaxHours": {str(b): h for b, h in report.per_bay_max_hours.items()},
    }


class HubCore:
    """Message-level hub service over any scheduler + network pair."""

    def __init__(
        self,
        sched: VirtualScheduler | RealScheduler,
        net: Any,
        store: RollupStore,
        listen_address: str,
        *,
        drop_acks: int = 0,
    ) -> None:
        self.sched = sched
        self.net = net
        self.store = store
        self.listen_address = listen_address
        self.drop_acks_remaining = drop_acks  # fault injection: swallow the first N acks
        self.receive_count = 0
        self.listener: Any = None

    def start(self) -> None:
        self.listener = self.net.listen(self.listen_address, self._accept)

    def stop(self) -> None:
        if self.listener is not None and hasattr(self.listener, "close"):
            self.listener.close()

    def _accept(self, conn: Any) -> None:
        conn.on_message = lambda message: self._on_message(conn, message)
        conn.on_close = lambda: None

    def _on_message(self, conn: Any, message: dict[str, Any]) -> None:
        mtype = message.get("type")
        try:
            if mtype == "rollup":
                self._handle_rollup(conn, message)
            elif mtype == "queryDaily":
                self._handle_query_daily(conn, message)
            elif mtype == "queryWeekly":
                self._handle_query_weekly(conn, message)
            else:
                conn.send(protocol.error_message(f"unknown message type {mtype!r}"))
        except ConnectionError:
            pass

    def _handle_rollup(self, conn: Any, message: dict[str, Any]) -> None:
        try:
            envelope = protocol.parse_rollup_envelope(message)
            if not _LOT_ID_RE.match(envelope["lotId"]):
                raise protocol.ProtocolError("lotId must be filesystem-safe")
        except protocol.ProtocolError as exc:
            conn.send(protocol.error_message(str(exc)))
            return
        self.receive_count += 1
        self.store.receive(envelope, received_at=self.sched.now_ms())
        if self.drop_acks_remaining > 0:
            self.drop_acks_remaining -= 1
            log.info("dropping ack for %s (injected fault)", envelope["key"])
            return
        conn.send(protocol.ack_message(envelope["key"]))

    def _handle_query_daily(self, conn: Any, message: dict[str, Any]) -> None:
        lot_id = message.get("lotId")
        window_start = message.get("windowStart")
        if not isinstance(lot_id, str) or not isinstance(window_start, int):
            conn.send(protocol.error_message("queryDaily needs lotId and windowStart"))
            return
        records = self.store.query_daily(lot_id, window_start)
        if records is None:
            conn.send(protocol.not_found_message())
        else:
            conn.send(protocol.daily_message(list(records)))

    def _handle_query_weekly(self, conn: Any, message: dict[str, Any]) -> None:
        lot_id = message.get("lotId")
        week_start = message.get("weekStart")
        if not isinstance(lot_id, str) or not isinstance(week_start, int):
            conn.send(protocol.error_message("queryWeekly needs lotId and weekStart"))
            return
        report = self.store.weekly_report(lot_id, week_start)
        if report is None:
            conn.send(protocol.not_found_message())
        else:
            conn.send(weekly_to_wire(report))


def run_hub_service(listen_address: str, store_dir: str | Path) -> None:
    """Blocking real-time hub (CLI entry)."""
    import threading

    from .transport import SocketNetwork

    sched = RealScheduler()
    net = SocketNetwork(sched)
    store = RollupStore(store_dir)
    core = HubCore(sched, net, store, listen_address)
    core.start()  # binds before dispatch starts, so failures surface here
    sched.start()
    log.info("hub listening on %s, store at %s", listen_address, store_dir)
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        sched.stop()
        core.stop()
