"""Simulated sensor fleet and gateway service.

Per-bay occupancy is an alternating on/off process with exponential
holding times, fully determined by the seed. The gateway serves the
protocol surface the edge agent speaks: a full snapshot on handshake,
a push per status change, and pong echoes. Fault injection (session
drops, duplicated updates, delivery delay, muted pongs) is config-gated
and off by default.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import protocol
from .clock import PRIORITY_FAULT, RealScheduler, VirtualScheduler
from .occupancy import BayStatus

log = logging.getLogger(__name__)

DEFAULT_BAY_COUNT = 22


@dataclass(frozen=True)
class SensorModel:
    """On/off dwell-time model for one fleet of bay sensors."""

    mean_occupied_min: float
    mean_free_min: float
    seed: int

    def __post_init__(self) -> None:
        if self.mean_occupied_min <= 0 or self.mean_free_min <= 0:
            raise ValueError("dwell-time means must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit an unsigned 64-bit integer")

    @property
    def occupied_fraction(self) -> float:
        """Long-run fraction of time a bay spends occupied."""
        return self.mean_occupied_min / (self.mean_occupied_min + self.mean_free_min)


@dataclass(frozen=True)
class FaultPlan:
    """Optional misbehaviors; every field defaults to 'off'."""

    disconnects: tuple[tuple[int, int], ...] = ()  # (at_ms, duration_ms), relative
    duplicate_updates: bool = False
    delay_ms: int = 0
    mute_pongs_after: int | None = None


@dataclass(frozen=True)
class GatewayConfig:
    listen_address: str
    lot_id: str
    bay_count: int = DEFAULT_BAY_COUNT
    model: SensorModel = field(default_factory=lambda: SensorModel(450.0, 990.0, 0))
    time_warp: float = 1.0
    faults: FaultPlan = field(default_factory=FaultPlan)

    def __post_init__(self) -> None:
        if self.bay_count < 0:
            raise ValueError("bay count must be non-negative")
        if self.time_warp <= 0:
            raise ValueError("time warp must be positive")


@dataclass(frozen=True)
class TraceItem:
    sim_ts: int  # milliseconds since the run start
    bay_id: int
    new_status: BayStatus


@dataclass(frozen=True)
class SimTrace:
    """A full scripted run: initial statuses plus every status change."""

    lot_id: str
    bay_count: int
    duration_ms: int
    initial: dict[int, BayStatus]
    items: tuple[TraceItem, ...]


def generate_trace(config: GatewayConfig, duration_ms: int) -> SimTrace:
    """Seeded per-bay alternating occupied/free trace, merged by time.

    Initial status is drawn with the long-run occupied fraction; dwell
    times are exponential with the configured means. Identical config and
    duration always produce the identical trace.
    """
    if duration_ms <= 0:
        raise ValueError("duration must be positive")
    model = config.model
    children = np.random.SeedSequence(model.seed).spawn(max(config.bay_count, 1))
    initial: dict[int, BayStatus] = {}
    items: list[tuple[int, int, int, BayStatus]] = []  # (sim_ts, bay_id, ordinal, status)
    for bay_id in range(1, config.bay_count + 1):
        rng = np.random.default_rng(children[bay_id - 1])
        status = (
            BayStatus.OCCUPIED
            if rng.random() < model.occupied_fraction
            else BayStatus.FREE
        )
        initial[bay_id] = status
        t = 0.0
        prev_ts = -1
        ordinal = 0
        while True:
            mean_ms = (
                model.mean_occupied_min
                if status is BayStatus.OCCUPIED
                else model.mean_free_min
            ) * 60_000.0
            t += rng.exponential(mean_ms)
            if t >= duration_ms:
                break
            ts = max(int(t), prev_ts + 1)  # keep per-bay timestamps strictly increasing
            if ts >= duration_ms:
                break
            status = BayStatus.FREE if status is BayStatus.OCCUPIED else BayStatus.OCCUPIED
            items.append((ts, bay_id, ordinal, status))
            prev_ts = ts
            ordinal += 1
    items.sort()
    return SimTrace(
        lot_id=config.lot_id,
        bay_count=config.bay_count,
        duration_ms=duration_ms,
        initial=initial,
        items=tuple(TraceItem(ts, bay, st) for ts, bay, _n, st in items),
    )


def snapshot_at(trace: SimTrace, sim_ts: int) -> dict[str, Any]:
    """The 'bays' message describing every bay's status at sim_ts."""
    if not 0 <= sim_ts <= trace.duration_ms:
        raise ValueError(f"sim_ts {sim_ts} outside [0, {trace.duration_ms}]")
    statuses = dict(trace.initial)
    for item in trace.items:
        if item.sim_ts > sim_ts:
            break
        statuses[item.bay_id] = item.new_status
    return protocol.bays_message(
        trace.lot_id, [(bay_id, statuses[bay_id].value) for bay_id in sorted(statuses)]
    )


# ---------------------------------------------------------------------------
# Trace persistence (harness artifact and scripted scenarios)


def write_trace(trace: SimTrace, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        meta = {
            "kind": "meta",
            "lotId": trace.lot_id,
            "bayCount": trace.bay_count,
            "durationMs": trace.duration_ms,
        }
        fh.write(json.dumps(meta, separators=(",", ":"), sort_keys=True) + "\n")
        initial = {
            "kind": "initial",
            "statuses": {str(b): s.value for b, s in sorted(trace.initial.items())},
        }
        fh.write(json.dumps(initial, separators=(",", ":"), sort_keys=True) + "\n")
        for item in trace.items:
            row = {
                "kind": "item",
                "simTs": item.sim_ts,
                "bayId": item.bay_id,
                "status": item.new_status.value,
            }
            fh.write(json.dumps(row, separators=(",", ":"), sort_keys=True) + "\n")


def read_trace(path: str | Path) -> SimTrace:
    lot_id = "lot"
    bay_count = 0
    duration_ms = 0
    initial: dict[int, BayStatus] = {}
    items: list[TraceItem] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            kind = row.get("kind")
            if kind == "meta":
                lot_id = row["lotId"]
                bay_count = int(row["bayCount"])
                duration_ms = int(row["durationMs"])
            elif kind == "initial":
                initial = {int(b): BayStatus(s) for b, s in row["statuses"].items()}
            elif kind == "item":
                items.append(
                    TraceItem(int(row["simTs"]), int(row["bayId"]), BayStatus(row["status"]))
                )
            else:
                raise ValueError(f"unknown trace line kind {kind!r}")
    items.sort(key=lambda it: (it.sim_ts, it.bay_id))
    return SimTrace(lot_id, bay_count, duration_ms, initial, tuple(items))


def scripted_trace(
    lot_id: str,
    bay_count: int,
    duration_ms: int,
    script_path: str | Path,
) -> SimTrace:
    """Build a trace from a script of items; bays default to free."""
    initial = {bay_id: BayStatus.FREE for bay_id in range(1, bay_count + 1)}
    items: list[TraceItem] = []
    with open(script_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            row = json.loads(line)
            if "initial" in row:
                for bay, status in row["initial"].items():
                    initial[int(bay)] = BayStatus(status)
                continue
            items.append(
                TraceItem(int(row["simTs"]), int(row["bayId"]), BayStatus(row["status"]))
            )
    items.sort(key=lambda it: (it.sim_ts, it.bay_id))
    return SimTrace(lot_id, bay_count, duration_ms, initial, tuple(items))


# ---------------------------------------------------------------------------
# The serving core


class GatewayCore:
    """Protocol-conformant gateway over any scheduler + network pair.

    One logical writer (the scheduler) advances the trace; sessions share
    only the read-only trace and the live status map maintained by the
    dispatch loop, so every snapshot is exactly consistent with the pushes
    a session subsequently receives.
    """

    def __init__(
        self,
        sched: VirtualScheduler | RealScheduler,
        net: Any,
        config: GatewayConfig,
        trace: SimTrace,
        *,
        on_update_sent: Callable[[int], None] | None = None,
    ) -> None:
        self.sched = sched
        self.net = net
        self.config = config
        self.trace = trace
        self.on_update_sent = on_update_sent
        self.start_ms: int | None = None
        self.refuse_until_ms: int | None = None
        self.current: dict[int, BayStatus] = dict(trace.initial)
        self.sessions: list[Any] = []  # handshaken connections
        self.pings_received: list[int] = []
        self.updates_sent = 0
        self.listener: Any = None

    def start(self) -> None:
        self.start_ms = self.sched.now_ms()
        self.listener = self.net.listen(self.config.listen_address, self._accept)
        for item in self.trace.items:
            delay = item.sim_ts + self.config.faults.delay_ms
            self.sched.call_at(self.start_ms + delay, self._dispatch, item)
        for at_ms, duration_ms in self.config.faults.disconnects:
            self.sched.call_at(
                self.start_ms + at_ms, self._fault_disconnect, duration_ms,
                priority=PRIORITY_FAULT,
            )

    def stop(self) -> None:
        for conn in list(self.sessions):
            conn.close()
        self.sessions.clear()
        if self.listener is not None and hasattr(self.listener, "close"):
            self.listener.close()

    # -- session handling

    def _accept(self, conn: Any) -> None:
        now = self.sched.now_ms()
        if self.refuse_until_ms is not None and now < self.refuse_until_ms:
            raise ConnectionRefusedError("gateway offline (injected fault)")
        conn.on_message = lambda message: self._on_message(conn, message)
        conn.on_close = lambda: self._on_close(conn)

    def _on_close(self, conn: Any) -> None:
        if conn in self.sessions:
            self.sessions.remove(conn)

    def _on_message(self, conn: Any, message: dict[str, Any]) -> None:
        mtype = message.get("type")
        if mtype == "hello":
            snapshot = protocol.bays_message(
                self.config.lot_id,
                [(bay_id, self.current[bay_id].value) for bay_id in sorted(self.current)],
            )
            try:
                conn.send(snapshot)
            except ConnectionError:
                return
            if conn not in self.sessions:
                self.sessions.append(conn)
            return
        if mtype == "ping":
            seq = message.get("seq")
            if not isinstance(seq, int):
                self._reject(conn, "ping must carry an integer seq")
                return
            self.pings_received.append(seq)
            muted = (
                self.config.faults.mute_pongs_after is not None
                and seq > self.config.faults.mute_pongs_after
            )
            if not muted:
                try:
                    conn.send(protocol.pong_message(seq))
                except ConnectionError:
                    pass
            return
        self._reject(conn, f"unknown message type {mtype!r}")

    def _reject(self, conn: Any, reason: str) -> None:
        try:
            conn.send(protocol.error_message(reason))
        except ConnectionError:
            pass
        conn.close()
        self._on_close(conn)

    # -- trace dispatch and faults

    def _dispatch(self, item: TraceItem) -> None:
        self.current[item.bay_id] = item.new_status
        message = protocol.bays_update_message(
            self.config.lot_id, item.bay_id, item.new_status.value
        )
        repeats = 2 if self.config.faults.duplicate_updates else 1
        for conn in list(self.sessions):
            for _ in range(repeats):
                try:
                    size = conn.send(message)
                except ConnectionError:
                    self._on_close(conn)
                    break
                self.updates_sent += 1
                if self.on_update_sent is not None:
                    self.on_update_sent(size)

    def _fault_disconnect(self, duration_ms: int) -> None:
        now = self.sched.now_ms()
        self.refuse_until_ms = now + duration_ms
        log.info("injected gateway disconnect at %d for %d ms", now, duration_ms)
        for conn in list(self.sessions):
            conn.close()
        self.sessions.clear()


def run_gateway_service(
    config: GatewayConfig, duration_ms: int, *, trace: SimTrace | None = None
) -> None:
    """Blocking real-time gateway (CLI entry); warp comes from config."""
    import threading

    from .transport import SocketNetwork

    if trace is None:
        trace = generate_trace(config, duration_ms)
    sched = RealScheduler(warp=config.time_warp)
    net = SocketNetwork(sched)
    core = GatewayCore(sched, net, config, trace)
    core.start()  # binds before dispatch starts, so failures surface here
    done = threading.Event()
    sched.call_at(sched.now_ms() + duration_ms, done.set)
    sched.start()
    log.info(
        "gateway serving %d bays on %s (warp x%g, %d trace items)",
        config.bay_count, config.listen_address, config.time_warp, len(trace.items),
    )
    try:
        done.wait()
    except KeyboardInterrupt:
        pass
    finally:
        sched.stop()
        core.stop()
