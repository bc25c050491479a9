"""Edge aggregation agent.

Connects to the gateway, stamps every received event with its own clock,
appends it to the write-ahead log before mutating the occupancy table,
pings the gateway on a fixed cadence, closes accounting windows on
schedule (CSV file, flush marker, upload envelope), and delivers
envelopes to the cloud hub at-least-once. On restart it rebuilds state by
replaying the log after the last flush marker.

Session loss is handled conservatively: in-progress occupancy is flushed
at the moment of detection and every bay is invalidated until the next
snapshot re-establishes it, so unobserved time is never counted.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

from . import eventlog, protocol
from .clock import PRIORITY_ROLLUP, RealScheduler, VirtualScheduler
from .occupancy import (
    BayState,
    BayStatus,
    EventKind,
    OccupancyEvent,
    RollupRecord,
    RollupWindow,
    apply_event,
    invalidate_statuses,
    rollup,
)

log = logging.getLogger(__name__)

CSV_HEADER = "bayId,occupationTime,occupationRate"


@dataclass(frozen=True)
class BackoffPolicy:
    initial_ms: int = 1000
    multiplier: float = 2.0
    cap_ms: int = 30000

    def delay_ms(self, attempt: int) -> int:
        return int(min(self.initial_ms * (self.multiplier ** attempt), self.cap_ms))


@dataclass(frozen=True)
class AgentConfig:
    gateway_address: str
    cloud_address: str
    log_path: Path
    csv_dir: Path
    poll_interval_sec: int = 60
    rollup_period_sec: int = 86_400
    clock_mode: str = "real"
    reconnect_backoff: BackoffPolicy = field(default_factory=BackoffPolicy)
    rollup_epoch_ms: int | None = None  # default: midnight UTC of the start day
    ack_timeout_ms: int = 5000
    client_name: str = "edge-agent"

    def __post_init__(self) -> None:
        if self.poll_interval_sec < 1:
            raise ValueError("poll interval must be at least 1 s")
        if self.rollup_period_sec < self.poll_interval_sec:
            raise ValueError("roll-up period must be at least the poll interval")
        if self.clock_mode not in ("real", "virtual"):
            raise ValueError("clock mode must be 'real' or 'virtual'")

    @property
    def poll_interval_ms(self) -> int:
        return self.poll_interval_sec * 1000

    @property
    def rollup_period_ms(self) -> int:
        return self.rollup_period_sec * 1000


def midnight_utc(ts_ms: int) -> int:
    dt = datetime.fromtimestamp(ts_ms / 1000, tz=timezone.utc)
    midnight = dt.replace(hour=0, minute=0, second=0, microsecond=0)
    return int(midnight.timestamp() * 1000)


def window_stamp(window_start_ms: int) -> str:
    dt = datetime.fromtimestamp(window_start_ms / 1000, tz=timezone.utc)
    return dt.strftime("%Y%m%dT%H%M%SZ")


def csv_filename(lot_id: str, window_start_ms: int) -> str:
    return f"rollup_{lot_id}_{window_stamp(window_start_ms)}.csv"


def write_csv(
    records: list[RollupRecord],
    window: RollupWindow,
    lot_id: str,
    csv_dir: str | Path,
) -> Path:
    """Bit-exact roll-up CSV: LF endings, integer seconds, 4-decimal rates."""
    for i in range(1, len(records)):
        if records[i].bay_id <= records[i - 1].bay_id:
            raise ValueError("records must be sorted by ascending bay id")
    csv_dir = Path(csv_dir)
    csv_dir.mkdir(parents=True, exist_ok=True)
    path = csv_dir / csv_filename(lot_id, window.start)
    lines = [CSV_HEADER]
    lines.extend(
        f"{r.bay_id},{r.occupation_time_sec},{r.occupation_rate:.4f}" for r in records
    )
    path.write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
    return path


def read_csv_records(path: str | Path) -> tuple[str, int, list[RollupRecord]]:
    """Parse a roll-up CSV back into (lot_id, window_start_ms, records)."""
    path = Path(path)
    stem = path.name
    if not stem.startswith("rollup_") or not stem.endswith(".csv"):
        raise ValueError(f"not a roll-up CSV name: {stem}")
    body = stem[len("rollup_"):-len(".csv")]
    lot_id, _, stamp = body.rpartition("_")
    if not lot_id:
        raise ValueError(f"roll-up CSV name missing lot id: {stem}")
    start_dt = datetime.strptime(stamp, "%Y%m%dT%H%M%SZ").replace(tzinfo=timezone.utc)
    window_start = int(start_dt.timestamp() * 1000)
    records: list[RollupRecord] = []
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"{path}: missing header")
    for line in lines[1:]:
        bay, sec, rate = line.split(",")
        records.append(RollupRecord(int(bay), int(sec), float(rate)))
    return lot_id, window_start, records


@dataclass
class _PendingUpload:
    key: str
    payload: bytes


class EdgeAgentCore:
    """Single-writer agent logic over any scheduler + network pair.

    All state mutation happens in scheduler callbacks; the ingest path,
    ping loop, and roll-up scheduler therefore never interleave
    mid-operation. The upload queue is drained by the same thread.
    """

    def __init__(
        self,
        sched: VirtualScheduler | RealScheduler,
        net: Any,
        config: AgentConfig,
        *,
        on_upload_sent: Callable[[int], None] | None = None,
    ) -> None:
        self.sched = sched
        self.net = net
        self.config = config
        self.on_upload_sent = on_upload_sent

        self.table: dict[int, BayState] = {}
        self.lot_id: str | None = None
        self.window_start: int = 0
        self.log_writer: eventlog.EventLogWriter | None = None

        self.session: Any = None
        self.handshaken = False
        self.connect_attempt = 0
        self._handshake_timer: Any = None

        self.ping_seq = 0
        self.last_pong_seq = 0
        self.missed_pongs = 0
        self._ping_timer: Any = None

        self.upload_queue: deque[_PendingUpload] = deque()
        self.hub_conn: Any = None
        self.upload_inflight: str | None = None
        self.upload_attempt = 0
        self._ack_timer: Any = None
        self._upload_retry_timer: Any = None

        self.warnings: list[str] = []
        self.rejected_events = 0
        self.events_ingested = 0
        self.pings_sent = 0
        self.upload_sends = 0
        self.recovered = False
        self.gap_spans: list[tuple[int, int]] = []
        self._gap_open: int | None = None

        self._boundary_timer: Any = None
        self._dead = False

    # ------------------------------------------------------------------
    # lifecycle

    def start(self) -> None:
        now = self.sched.now_ms()
        records, skipped = eventlog.read_records(self.config.log_path)
        if skipped:
            self.warnings.append(f"log recovery skipped {skipped} undecodable line(s)")
        self.log_writer = eventlog.EventLogWriter(self.config.log_path)
        if records:
            self._recover(records, now)
        else:
            epoch = (
                self.config.rollup_epoch_ms
                if self.config.rollup_epoch_ms is not None
                else midnight_utc(now)
            )
            self.window_start = self._align_window(epoch, now)
        self._schedule_boundary()
        self._connect()

    def _align_window(self, epoch: int, now: int) -> int:
        """Start of the window containing now, on the epoch-aligned grid."""
        if now <= epoch:
            return epoch
        period = self.config.rollup_period_ms
        return epoch + ((now - epoch) // period) * period

    def kill(self) -> None:
        """Abrupt stop (crash simulation): no markers, no flush."""
        self._dead = True
        for timer in (
            self._handshake_timer, self._ping_timer, self._ack_timer,
            self._upload_retry_timer, self._boundary_timer,
        ):
            if timer is not None:
                timer.cancel()
        for conn in (self.session, self.hub_conn):
            if conn is not None:
                try:
                    conn.close()
                except ConnectionError:
                    pass
        if self.log_writer is not None:
            self.log_writer.close()

    stop = kill

    @property
    def total_gap_ms(self) -> int:
        total = sum(end - start for start, end in self.gap_spans)
        if self._gap_open is not None:
            total += self.sched.now_ms() - self._gap_open
        return total

    # ------------------------------------------------------------------
    # recovery

    def _recover(self, records: list[dict[str, Any]], now: int) -> None:
        self.recovered = True
        period = self.config.rollup_period_ms
        idx = eventlog.last_flush_index(records)
        if idx is not None:
            self.window_start = int(records[idx]["ts"])
            tail = records[idx + 1:]
        else:
            first_ts = int(records[0]["ts"])
            epoch = (
                self.config.rollup_epoch_ms
                if self.config.rollup_epoch_ms is not None
                else midnight_utc(first_ts)
            )
            self.window_start = epoch
            tail = records
        for record in tail:
            if record.get("marker") == eventlog.MARKER_DISCONNECT:
                invalidate_statuses(self.table, int(record["ts"]))
                continue
            if record.get("marker") is not None or record.get("rejected"):
                continue
            event = eventlog.record_to_event(record)
            apply_event(self.table, event, self.warnings)
            self.lot_id = event.lot_id
        # Close any windows whose boundary passed while we were down.
        while self.window_start + period <= now:
            self._run_rollup(self.window_start + period)
        # The downtime itself is an unobserved gap.
        self._append_log(eventlog.disconnect_record(now))
        invalidate_statuses(self.table, now)
        self._gap_open = now
        self._requeue_existing_csvs()
        log.info(
            "recovered %d bays from %s (%d log records)",
            len(self.table), self.config.log_path, len(records),
        )

    def _requeue_existing_csvs(self) -> None:
        """At-least-once safety net: re-upload every window CSV already on disk."""
        csv_dir = Path(self.config.csv_dir)
        if not csv_dir.exists():
            return
        for path in sorted(csv_dir.glob("rollup_*.csv")):
            try:
                lot_id, window_start, records = read_csv_records(path)
            except ValueError as exc:
                self.warnings.append(f"could not re-enqueue {path.name}: {exc}")
                continue
            payload = protocol.encode_rollup_envelope(
                lot_id, window_start, window_start + self.config.rollup_period_ms, records
            )
            self.upload_queue.append(
                _PendingUpload(protocol.envelope_key(lot_id, window_start), payload)
            )
        self._pump_uploads()

    # ------------------------------------------------------------------
    # gateway session

    def _connect(self) -> None:
        if self._dead:
            return
        try:
            conn = self.net.connect(self.config.gateway_address)
        except ConnectionRefusedError:
            self._schedule_reconnect()
            return
        self.session = conn
        self.handshaken = False
        conn.on_message = self._on_gateway_message
        conn.on_close = self._on_gateway_close
        try:
            conn.send(protocol.hello_message(self.config.client_name))
        except ConnectionError:
            self.session = None
            self._schedule_reconnect()
            return
        self._handshake_timer = self.sched.call_later(
            self.config.poll_interval_ms, self._handshake_timeout
        )

    def _schedule_reconnect(self) -> None:
        delay = self.config.reconnect_backoff.delay_ms(self.connect_attempt)
        self.connect_attempt += 1
        self.sched.call_later(delay, self._connect)

    def _handshake_timeout(self) -> None:
        if self._dead or self.session is None or self.handshaken:
            return
        log.warning("gateway handshake timed out; reconnecting")
        session, self.session = self.session, None
        session.on_close = None
        session.close()
        self._schedule_reconnect()

    def _abort_session(self, reason: str) -> None:
        """Tear down an established session and reconnect immediately."""
        if self.session is not None:
            session, self.session = self.session, None
            session.on_close = None
            try:
                session.close()
            except ConnectionError:
                pass
        self._cancel_ping()
        if self.handshaken:
            self.handshaken = False
            self._mark_disconnected(self.sched.now_ms(), reason)
        self._connect()

    def _on_gateway_close(self) -> None:
        if self._dead:
            return
        log.info("gateway session closed")
        if self._handshake_timer is not None:
            self._handshake_timer.cancel()
        self.session = None
        self._cancel_ping()
        if self.handshaken:
            # An established session died: mark the gap and retry at once.
            self.handshaken = False
            self._mark_disconnected(self.sched.now_ms(), "session closed by peer")
            self._connect()
        else:
            # Dropped before the snapshot (e.g. refused at admission): back off.
            self._schedule_reconnect()

    def _mark_disconnected(self, now: int, reason: str) -> None:
        log.warning("observation interrupted at %d: %s", now, reason)
        self._append_log(eventlog.disconnect_record(now))
        invalidate_statuses(self.table, now)
        if self._gap_open is None:
            self._gap_open = now

    def _on_gateway_message(self, message: dict[str, Any]) -> None:
        if self._dead:
            return
        mtype = message.get("type")
        if mtype == "bays":
            self._on_snapshot(message)
        elif mtype == "baysUpdate":
            self._on_update(message)
        elif mtype == "pong":
            seq = message.get("seq")
            if isinstance(seq, int) and seq == self.ping_seq:
                self.last_pong_seq = seq
            # A stale or mismatched seq is ignored and counts as missing.
        elif mtype == "error":
            self.warnings.append(f"gateway error: {message.get('reason')}")
        else:
            self.warnings.append(f"unexpected gateway message type {mtype!r}")

    def _on_snapshot(self, message: dict[str, Any]) -> None:
        try:
            triples = protocol.parse_bays_snapshot(message)
        except protocol.ProtocolError as exc:
            self.warnings.append(f"malformed snapshot: {exc}")
            if self._handshake_timer is not None:
                self._handshake_timer.cancel()
            session, self.session = self.session, None
            if session is not None:
                session.on_close = None
                session.close()
            self._schedule_reconnect()
            return
        if self._handshake_timer is not None:
            self._handshake_timer.cancel()
        now = self.sched.now_ms()
        self.handshaken = True
        self.connect_attempt = 0
        if self._gap_open is not None:
            self.gap_spans.append((self._gap_open, now))
            self._gap_open = None
        for lot_id, bay_id, status in triples:
            event = OccupancyEvent(
                EventKind.SNAPSHOT, now, lot_id, bay_id, BayStatus(status)
            )
            self._append_log(eventlog.event_record(event))
            apply_event(self.table, event, self.warnings)
            self.lot_id = lot_id
        self._start_ping_loop(now)
        log.info("handshake complete: %d bays at %d", len(triples), now)

    def _on_update(self, message: dict[str, Any]) -> None:
        if not self.handshaken:
            self.warnings.append("update received before snapshot; ignored")
            return
        try:
            lot_id, bay_id, status = protocol.parse_bays_update(message)
        except protocol.ProtocolError as exc:
            self.warnings.append(f"malformed update: {exc}")
            return
        now = self.sched.now_ms()
        event = OccupancyEvent(EventKind.UPDATE, now, lot_id, bay_id, BayStatus(status))
        state = self.table.get(bay_id)
        if state is not None and event.ts < state.last_transition_ts:
            # Clock regression: record it, touch nothing.
            self._append_log(eventlog.event_record(event, rejected=True))
            self.rejected_events += 1
            self.warnings.append(
                f"rejected event for bay {bay_id}: ts {event.ts} precedes "
                f"{state.last_transition_ts}"
            )
            return
        self._append_log(eventlog.event_record(event))
        apply_event(self.table, event, self.warnings)
        self.events_ingested += 1

    # ------------------------------------------------------------------
    # ping loop

    def _start_ping_loop(self, session_start: int) -> None:
        self._cancel_ping()
        self.ping_seq = 0
        self.last_pong_seq = 0
        self.missed_pongs = 0
        self._ping_timer = self.sched.call_at(
            session_start + self.config.poll_interval_ms, self._ping_tick
        )

    def _cancel_ping(self) -> None:
        if self._ping_timer is not None:
            self._ping_timer.cancel()
            self._ping_timer = None

    def _ping_tick(self) -> None:
        if self._dead or self.session is None or not self.handshaken:
            return
        if self.ping_seq > 0 and self.last_pong_seq < self.ping_seq:
            self.missed_pongs += 1
            if self.missed_pongs >= 3:
                self._abort_session("3 consecutive pings unanswered")
                return
        else:
            self.missed_pongs = 0
        self.ping_seq += 1
        try:
            self.session.send(protocol.ping_message(self.ping_seq))
        except ConnectionError:
            self._abort_session("ping send failed")
            return
        self.pings_sent += 1
        self._ping_timer = self.sched.call_later(
            self.config.poll_interval_ms, self._ping_tick
        )

    # ------------------------------------------------------------------
    # roll-up schedule

    def _schedule_boundary(self) -> None:
        boundary = self.window_start + self.config.rollup_period_ms
        self._boundary_timer = self.sched.call_at(
            boundary, self._on_boundary, boundary, priority=PRIORITY_ROLLUP
        )

    def _on_boundary(self, boundary: int) -> None:
        if self._dead:
            return
        self._run_rollup(boundary)
        self._schedule_boundary()

    def _run_rollup(self, boundary: int) -> None:
        window = RollupWindow(self.window_start, boundary)
        records, _ = rollup(self.table, window)
        lot_id = self.lot_id if self.lot_id is not None else "unknown"
        payload = protocol.encode_rollup_envelope(lot_id, window.start, window.end, records)
        try:
            write_csv(records, window, lot_id, self.config.csv_dir)
        except OSError as exc:
            log.warning("CSV write failed (%s); retrying once", exc)
            try:
                write_csv(records, window, lot_id, self.config.csv_dir)
            except OSError as exc2:
                self._dead_letter(lot_id, window, payload, exc2)
        self._append_log(eventlog.flush_record(boundary, window.start))
        # Re-seed the log with the carried-over statuses so replay from this
        # marker reconstructs the post-reset table.
        for bay_id in sorted(self.table):
            state = self.table[bay_id]
            state.last_transition_ts = boundary
            seed = OccupancyEvent(
                EventKind.SNAPSHOT, boundary, state.lot_id, bay_id, state.status
            )
            self._append_log(eventlog.event_record(seed))
        self.window_start = boundary
        self.upload_queue.append(
            _PendingUpload(protocol.envelope_key(lot_id, window.start), payload)
        )
        self._pump_uploads()

    def _dead_letter(
        self, lot_id: str, window: RollupWindow, payload: bytes, exc: Exception
    ) -> None:
        # The in-memory reset must never be skipped; park the envelope instead.
        dead_dir = Path(self.config.csv_dir) / "deadletter"
        try:
            dead_dir.mkdir(parents=True, exist_ok=True)
            name = f"{lot_id}_{window.start}.envelope.json"
            (dead_dir / name).write_bytes(payload)
            log.error("CSV write failed twice (%s); envelope parked in %s", exc, dead_dir)
        except OSError as park_exc:
            log.error("dead-letter write also failed: %s", park_exc)

    # ------------------------------------------------------------------
    # uploads (at-least-once)

    def _pump_uploads(self) -> None:
        if self._dead or self.upload_inflight is not None or not self.upload_queue:
            return
        if self.hub_conn is None:
            try:
                conn = self.net.connect(self.config.cloud_address)
            except ConnectionRefusedError:
                self._schedule_upload_retry()
                return
            conn.on_message = self._on_hub_message
            conn.on_close = self._on_hub_close
            self.hub_conn = conn
        head = self.upload_queue[0]
        try:
            size = self.hub_conn.send_raw(head.payload)
        except ConnectionError:
            self.hub_conn = None
            self._schedule_upload_retry()
            return
        self.upload_sends += 1
        if self.on_upload_sent is not None:
            self.on_upload_sent(size)
        self.upload_inflight = head.key
        self._ack_timer = self.sched.call_later(
            self.config.ack_timeout_ms, self._on_ack_timeout
        )

    def _schedule_upload_retry(self) -> None:
        delay = self.config.reconnect_backoff.delay_ms(self.upload_attempt)
        self.upload_attempt += 1
        self._upload_retry_timer = self.sched.call_later(delay, self._pump_uploads)

    def _on_ack_timeout(self) -> None:
        if self._dead or self.upload_inflight is None:
            return
        log.warning("upload ack timed out for %s; retrying", self.upload_inflight)
        self.upload_inflight = None
        if self.hub_conn is not None:
            conn, self.hub_conn = self.hub_conn, None
            conn.on_close = None
            try:
                conn.close()
            except ConnectionError:
                pass
        self._schedule_upload_retry()

    def _on_hub_message(self, message: dict[str, Any]) -> None:
        if self._dead:
            return
        if message.get("type") != "ack":
            return  # malformed reply: the ack timer handles it
        key = message.get("key")
        if self.upload_inflight is None or key != self.upload_inflight:
            return
        if self._ack_timer is not None:
            self._ack_timer.cancel()
            self._ack_timer = None
        self.upload_inflight = None
        self.upload_attempt = 0
        self.upload_queue.popleft()
        self._pump_uploads()

    def _on_hub_close(self) -> None:
        if self._dead:
            return
        self.hub_conn = None
        if self.upload_inflight is not None:
            if self._ack_timer is not None:
                self._ack_timer.cancel()
                self._ack_timer = None
            self.upload_inflight = None
            self._schedule_upload_retry()

    # ------------------------------------------------------------------

    def _append_log(self, record: dict[str, Any]) -> None:
        if self.log_writer is not None:
            self.log_writer.append(record)


def run_agent_service(config: AgentConfig, *, warp: float = 1.0) -> None:
    """Blocking real-time agent (CLI entry)."""
    import threading

    from .transport import SocketNetwork

    sched = RealScheduler(warp=warp)
    net = SocketNetwork(sched)
    core = EdgeAgentCore(sched, net, config)
    core.start()  # opens the log and dials out before dispatch starts
    sched.start()
    log.info(
        "agent polling %s every %d s, roll-up every %d s, uploading to %s",
        config.gateway_address, config.poll_interval_sec,
        config.rollup_period_sec, config.cloud_address,
    )
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        sched.stop()
        core.stop()
