"""Deterministic scenario orchestration and verification.

run_sim wires the gateway simulator, edge agent, and cloud hub together
in-process under one virtual scheduler: a multi-day scenario executes in
milliseconds and two runs of the same scenario produce byte-identical
CSVs, hub store contents, and traffic ledgers. verify replays the run's
artifacts against the brute-force oracle; replay regenerates CSVs from an
event log alone; the traffic ledger quantifies aggregated uploads against
hypothetical per-event forwarding.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from . import eventlog
from .agent import (
    AgentConfig,
    BackoffPolicy,
    EdgeAgentCore,
    midnight_utc,
    read_csv_records,
    write_csv,
)
from .clock import PRIORITY_FAULT, VirtualScheduler
from .gateway import (
    FaultPlan,
    GatewayConfig,
    GatewayCore,
    SensorModel,
    SimTrace,
    generate_trace,
    read_trace,
    scripted_trace,
    write_trace,
)
from .hub import HubCore, RollupStore, fleet_average_hours
from .occupancy import (
    EventKind,
    OccupancyEvent,
    RollupRecord,
    RollupWindow,
    apply_event,
    invalidate_statuses,
    rollup,
    update_occupation_time,
)
from .oracle import oracle_occupancy
from .transport import VirtualNetwork

log = logging.getLogger(__name__)

MS_PER_DAY = 86_400_000
DEFAULT_START = "2018-11-19T00:00:00Z"

GATEWAY_ADDRESS = "sim://gateway"
HUB_ADDRESS = "sim://hub"


class ScenarioError(ValueError):
    """The scenario file is malformed or internally inconsistent."""


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    seed: int = 0
    lot_id: str = "LOT-A"
    bays: int = 22
    mean_occupied_min: float = 450.0
    mean_free_min: float = 990.0
    days: int = 1
    start_ms: int = 1_542_585_600_000  # 2018-11-19T00:00:00Z; the 'start' key
    poll_interval_sec: int = 60
    rollup_period_sec: int = 86_400
    backoff_initial_ms: int = 1000
    backoff_multiplier: float = 2.0
    backoff_cap_ms: int = 30_000
    ack_timeout_ms: int = 5000
    upload_grace_sec: int = 120
    script: Path | None = None
    inject_gateway_disconnect_at_sec: int | None = None
    inject_gateway_disconnect_duration_sec: int | None = None
    inject_agent_kill_at_sec: int | None = None
    inject_drop_acks: int = 0
    inject_duplicate_updates: bool = False

    @property
    def duration_ms(self) -> int:
        return self.days * MS_PER_DAY

    @property
    def period_ms(self) -> int:
        return self.rollup_period_sec * 1000

    @property
    def end_ms(self) -> int:
        return self.start_ms + self.duration_ms

    @property
    def window_epoch_ms(self) -> int:
        return midnight_utc(self.start_ms)


def _parse_start(value: str) -> int:
    value = value.strip()
    if value.lstrip("-").isdigit():
        return int(value)
    try:
        dt = datetime.fromisoformat(value.replace("Z", "+00:00"))
    except ValueError as exc:
        raise ScenarioError(f"bad start time {value!r}: {exc}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp() * 1000)


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ScenarioError(f"bad boolean {value!r}")


_SCENARIO_KEYS: dict[str, Any] = {
    "name": str,
    "seed": int,
    "lot_id": str,
    "bays": int,
    "mean_occupied_min": float,
    "mean_free_min": float,
    "days": int,
    "start": _parse_start,
    "poll_interval_sec": int,
    "rollup_period_sec": int,
    "backoff_initial_ms": int,
    "backoff_multiplier": float,
    "backoff_cap_ms": int,
    "ack_timeout_ms": int,
    "upload_grace_sec": int,
    "script": str,
    "inject_gateway_disconnect_at_sec": int,
    "inject_gateway_disconnect_duration_sec": int,
    "inject_agent_kill_at_sec": int,
    "inject_drop_acks": int,
    "inject_duplicate_updates": _parse_bool,
}


def parse_scenario(path: str | Path) -> ScenarioConfig:
    """Parse a flat key = value scenario file ('#' comments allowed)."""
    path = Path(path)
    values: dict[str, Any] = {"start": _parse_start(DEFAULT_START)}
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        parser = _SCENARIO_KEYS.get(key)
        if parser is None:
            raise ScenarioError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = parser(value)
        except (ValueError, TypeError) as exc:
            raise ScenarioError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    values["start_ms"] = values.pop("start")
    if "script" in values:
        script = Path(values["script"])
        if not script.is_absolute():
            script = path.parent / script
        values["script"] = script
    try:
        scenario = ScenarioConfig(**values)
    except TypeError as exc:
        raise ScenarioError(str(exc)) from exc
    _validate_scenario(scenario)
    return scenario


def _validate_scenario(scenario: ScenarioConfig) -> None:
    if scenario.days < 1:
        raise ScenarioError("days must be at least 1")
    if scenario.bays < 0:
        raise ScenarioError("bays must be non-negative")
    if scenario.seed < 0:
        raise ScenarioError("seed must be non-negative")
    if scenario.mean_occupied_min <= 0 or scenario.mean_free_min <= 0:
        raise ScenarioError("dwell-time means must be positive")
    if scenario.duration_ms % scenario.period_ms != 0:
        raise ScenarioError("roll-up period must divide the run duration")
    if (scenario.inject_gateway_disconnect_at_sec is None) != (
        scenario.inject_gateway_disconnect_duration_sec is None
    ):
        raise ScenarioError("gateway disconnect injection needs both at and duration")
    if scenario.script is not None and not scenario.script.exists():
        raise ScenarioError(f"script file not found: {scenario.script}")


# ---------------------------------------------------------------------------
# Traffic ledger


@dataclass
class TrafficLedger:
    """Bytes actually uploaded vs per-event forwarding of the same run."""

    raw_forward_bytes: int = 0
    aggregated_bytes: int = 0
    event_count: int = 0
    envelope_sends: int = 0

    @property
    def reduction_ratio(self) -> float | None:
        if self.raw_forward_bytes == 0:
            return None
        return self.aggregated_bytes / self.raw_forward_bytes

    def to_json(self) -> dict[str, Any]:
        return {
            "rawForwardBytes": self.raw_forward_bytes,
            "aggregatedBytes": self.aggregated_bytes,
            "eventCount": self.event_count,
            "envelopeSends": self.envelope_sends,
            "reductionRatio": self.reduction_ratio,
        }

    @classmethod
    def from_json(cls, row: dict[str, Any]) -> "TrafficLedger":
        return cls(
            raw_forward_bytes=int(row["rawForwardBytes"]),
            aggregated_bytes=int(row["aggregatedBytes"]),
            event_count=int(row["eventCount"]),
            envelope_sends=int(row["envelopeSends"]),
        )


# ---------------------------------------------------------------------------
# run-sim


@dataclass
class RunResult:
    out_dir: Path
    scenario: ScenarioConfig
    ledger: TrafficLedger
    csv_paths: list[Path]
    total_gap_ms: int
    summary_path: Path
    pings_sent: int
    events_ingested: int
    warnings: int


def _build_trace(scenario: ScenarioConfig) -> SimTrace:
    if scenario.script is not None:
        return scripted_trace(
            scenario.lot_id, scenario.bays, scenario.duration_ms, scenario.script
        )
    config = GatewayConfig(
        listen_address=GATEWAY_ADDRESS,
        lot_id=scenario.lot_id,
        bay_count=scenario.bays,
        model=SensorModel(scenario.mean_occupied_min, scenario.mean_free_min, scenario.seed),
    )
    return generate_trace(config, scenario.duration_ms)


def run_sim(scenario: ScenarioConfig, out_dir: str | Path) -> RunResult:
    """Execute one scenario end to end under the virtual clock."""
    out_dir = Path(out_dir)
    if (out_dir / "agent.log").exists():
        raise ScenarioError(
            f"{out_dir} already contains a run (agent.log present); "
            "use a fresh output directory"
        )
    csv_dir = out_dir / "csv"
    store_dir = out_dir / "hub_store"
    for sub in (out_dir, csv_dir, store_dir):
        sub.mkdir(parents=True, exist_ok=True)

    epoch = scenario.start_ms
    sched = VirtualScheduler(epoch)
    net = VirtualNetwork(sched)
    ledger = TrafficLedger()

    trace = _build_trace(scenario)
    write_trace(trace, out_dir / "trace.jsonl")

    faults = FaultPlan(
        disconnects=(
            (
                scenario.inject_gateway_disconnect_at_sec * 1000,
                scenario.inject_gateway_disconnect_duration_sec * 1000,
            ),
        )
        if scenario.inject_gateway_disconnect_at_sec is not None
        else (),
        duplicate_updates=scenario.inject_duplicate_updates,
    )
    gw_config = GatewayConfig(
        listen_address=GATEWAY_ADDRESS,
        lot_id=scenario.lot_id,
        bay_count=scenario.bays,
        model=SensorModel(scenario.mean_occupied_min, scenario.mean_free_min, scenario.seed),
        faults=faults,
    )

    def count_update(size: int) -> None:
        ledger.raw_forward_bytes += size
        ledger.event_count += 1

    def count_upload(size: int) -> None:
        ledger.aggregated_bytes += size
        ledger.envelope_sends += 1

    gateway = GatewayCore(sched, net, gw_config, trace, on_update_sent=count_update)
    store = RollupStore(store_dir, fsync=False)
    hub = HubCore(sched, net, store, HUB_ADDRESS, drop_acks=scenario.inject_drop_acks)
    agent_config = AgentConfig(
        gateway_address=GATEWAY_ADDRESS,
        cloud_address=HUB_ADDRESS,
        log_path=out_dir / "agent.log",
        csv_dir=csv_dir,
        poll_interval_sec=scenario.poll_interval_sec,
        rollup_period_sec=scenario.rollup_period_sec,
        clock_mode="virtual",
        reconnect_backoff=BackoffPolicy(
            scenario.backoff_initial_ms,
            scenario.backoff_multiplier,
            scenario.backoff_cap_ms,
        ),
        rollup_epoch_ms=scenario.window_epoch_ms,
        ack_timeout_ms=scenario.ack_timeout_ms,
    )

    agents: list[EdgeAgentCore] = []
    gap_from_dead_agents = [0]

    def spawn_agent() -> EdgeAgentCore:
        core = EdgeAgentCore(sched, net, agent_config, on_upload_sent=count_upload)
        agents.append(core)
        core.start()
        return core

    hub.start()
    gateway.start()
    spawn_agent()

    if scenario.inject_agent_kill_at_sec is not None:
        kill_at = epoch + scenario.inject_agent_kill_at_sec * 1000

        def kill_and_restart() -> None:
            victim = agents[-1]
            gap_from_dead_agents[0] += victim.total_gap_ms
            victim.kill()
            log.info("agent killed at %d; restarting from its log", sched.now_ms())
            spawn_agent()

        sched.call_at(kill_at, kill_and_restart, priority=PRIORITY_FAULT)

    sched.run_until(scenario.end_ms)
    sched.run_until(scenario.end_ms + scenario.upload_grace_sec * 1000)

    live = agents[-1]
    total_gap_ms = gap_from_dead_agents[0] + live.total_gap_ms
    live.stop()
    gateway.stop()
    hub.stop()

    (out_dir / "ledger.json").write_text(
        json.dumps(ledger.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    meta = {
        "scenario": {
            key: (str(value) if isinstance(value, Path) else value)
            for key, value in vars(scenario).items()
        },
        "startMs": scenario.start_ms,
        "endMs": scenario.end_ms,
        "windowEpochMs": scenario.window_epoch_ms,
        "periodMs": scenario.period_ms,
        "lotId": scenario.lot_id,
        "bayCount": scenario.bays,
        "totalGapMs": total_gap_ms,
        "counters": {
            "eventsIngested": sum(a.events_ingested for a in agents),
            "pingsSent": sum(a.pings_sent for a in agents),
            "uploadSends": sum(a.upload_sends for a in agents),
            "warnings": sum(len(a.warnings) for a in agents),
            "rejectedEvents": sum(a.rejected_events for a in agents),
            "agentIncarnations": len(agents),
        },
    }
    (out_dir / "meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    summary_path = out_dir / "summary.md"
    summary_path.write_text(build_report_markdown(store, ledger), encoding="utf-8")

    return RunResult(
        out_dir=out_dir,
        scenario=scenario,
        ledger=ledger,
        csv_paths=sorted(csv_dir.glob("rollup_*.csv")),
        total_gap_ms=total_gap_ms,
        summary_path=summary_path,
        pings_sent=sum(a.pings_sent for a in agents),
        events_ingested=sum(a.events_ingested for a in agents),
        warnings=sum(len(a.warnings) for a in agents),
    )


# ---------------------------------------------------------------------------
# replay


@dataclass
class ReplayWindow:
    window: RollupWindow
    totals_ms: dict[int, int]
    records: list[RollupRecord]
    csv_path: Path | None


@dataclass
class ReplayResult:
    windows: list[ReplayWindow]
    skipped_lines: int
    csv_paths: list[Path]


def replay_log(
    log_path: str | Path,
    window_sec: int,
    out_dir: str | Path | None,
    *,
    epoch_ms: int | None = None,
    lot_fallback: str = "lot",
) -> ReplayResult:
    """Feed an event log through the accounting core from a clean table.

    Window boundaries are re-derived on the epoch-aligned grid (default:
    midnight UTC of the first record), flush markers in the log are
    redundant against that grid, disconnect markers invalidate statuses,
    and rejected events are skipped. Running twice yields byte-identical
    CSVs.
    """
    if window_sec < 1:
        raise ValueError("window must be at least 1 s")
    period = window_sec * 1000
    out = Path(out_dir) if out_dir is not None else None
    records, skipped = eventlog.read_records(log_path)

    windows: list[ReplayWindow] = []
    csv_paths: list[Path] = []

    def emit(window: RollupWindow, totals: dict[int, int], recs: list[RollupRecord], lot: str) -> None:
        csv_path = None
        if out is not None:
            csv_path = write_csv(recs, window, lot, out)
            csv_paths.append(csv_path)
        windows.append(ReplayWindow(window, totals, recs, csv_path))

    if not records:
        window = RollupWindow(0, period)
        emit(window, {}, [], lot_fallback)
        return ReplayResult(windows, skipped, csv_paths)

    first_ts = int(records[0]["ts"])
    epoch = epoch_ms if epoch_ms is not None else midnight_utc(first_ts)
    window_start = epoch + ((first_ts - epoch) // period) * period if first_ts >= epoch else epoch

    table: dict[int, Any] = {}
    lot_seen = lot_fallback
    has_observations = False

    def close_window(boundary: int) -> None:
        nonlocal window_start, has_observations
        window = RollupWindow(window_start, boundary)
        update_occupation_time(table, boundary)
        totals = {b: s.accumulated_occupation_ms for b, s in table.items()}
        recs, _ = rollup(table, window)
        for state in table.values():
            state.last_transition_ts = boundary
        emit(window, totals, recs, lot_seen)
        window_start = boundary
        has_observations = False

    for record in records:
        ts = int(record["ts"])
        while ts >= window_start + period:
            close_window(window_start + period)
        if record.get("marker") == eventlog.MARKER_FLUSH:
            continue
        if record.get("marker") == eventlog.MARKER_DISCONNECT:
            invalidate_statuses(table, ts)
            if ts > window_start:
                has_observations = True
            continue
        if record.get("rejected"):
            continue
        event = eventlog.record_to_event(record)
        apply_event(table, event)
        # Updates are real observations; snapshots at exactly the window
        # start are boundary bookkeeping (post-rollup re-seed lines).
        if event.kind is EventKind.UPDATE or event.ts > window_start:
            has_observations = True
        lot_seen = event.lot_id

    # A log that simply stops mid-window (a crash leftover) still gets its
    # in-progress window closed; a log ending at a flush boundary does not.
    if has_observations:
        close_window(window_start + period)

    return ReplayResult(windows, skipped, csv_paths)


# ---------------------------------------------------------------------------
# verify


@dataclass
class VerifyReport:
    ok: bool
    max_error_ms: int
    allowed_ms: int
    checks: list[str]
    failures: list[str]

    def render(self) -> str:
        lines = []
        lines.extend(f"ok: {c}" for c in self.checks)
        lines.extend(f"FAIL: {f}" for f in self.failures)
        lines.append(
            f"max per-bay error {self.max_error_ms} ms "
            f"(allowed {self.allowed_ms} ms): {'pass' if self.ok else 'FAIL'}"
        )
        return "\n".join(lines) + "\n"


def trace_to_events(trace: SimTrace, epoch_ms: int) -> list[OccupancyEvent]:
    """The oracle's input: a snapshot volley at the epoch plus all changes."""
    events = [
        OccupancyEvent(EventKind.SNAPSHOT, epoch_ms, trace.lot_id, bay_id, status)
        for bay_id, status in sorted(trace.initial.items())
    ]
    events.extend(
        OccupancyEvent(
            EventKind.UPDATE, epoch_ms + item.sim_ts, trace.lot_id, item.bay_id, item.new_status
        )
        for item in trace.items
    )
    return events


def scenario_windows(meta: dict[str, Any]) -> list[RollupWindow]:
    period = int(meta["periodMs"])
    start = int(meta["startMs"])
    end = int(meta["endMs"])
    epoch = int(meta["windowEpochMs"])
    windows = []
    k = (start - epoch) // period
    while True:
        w_start = epoch + k * period
        w_end = w_start + period
        if w_end > end:
            break
        if w_end > start:
            windows.append(RollupWindow(w_start, w_end))
        k += 1
    return windows


def verify_run(run_dir: str | Path) -> VerifyReport:
    """Diff a run's CSVs, hub store, and replayed log against the oracle."""
    run_dir = Path(run_dir)
    required = ["meta.json", "trace.jsonl", "agent.log", "csv", "hub_store"]
    missing = [name for name in required if not (run_dir / name).exists()]
    if missing:
        inventory = sorted(p.name for p in run_dir.iterdir()) if run_dir.exists() else []
        return VerifyReport(
            ok=False,
            max_error_ms=0,
            allowed_ms=0,
            checks=[],
            failures=[f"missing artifacts {missing}; run dir contains {inventory}"],
        )

    meta = json.loads((run_dir / "meta.json").read_text(encoding="utf-8"))
    allowed_ms = int(meta["totalGapMs"])
    lot_id = meta["lotId"]
    period_ms = int(meta["periodMs"])
    trace = read_trace(run_dir / "trace.jsonl")
    events = trace_to_events(trace, int(meta["startMs"]))
    windows = scenario_windows(meta)

    replayed = replay_log(
        run_dir / "agent.log",
        period_ms // 1000,
        None,
        epoch_ms=int(meta["windowEpochMs"]),
    )
    replay_by_start = {rw.window.start: rw for rw in replayed.windows}
    store = RollupStore(run_dir / "hub_store", fsync=False)

    checks: list[str] = []
    failures: list[str] = []
    max_error_ms = 0

    for window in windows:
        label = f"window {window.start}"
        oracle = oracle_occupancy(events, window)
        rw = replay_by_start.get(window.start)
        if rw is None:
            if not oracle:
                checks.append(f"{label}: no bays observed, nothing to diff")
                continue
            failures.append(f"{label}: no replayed window from agent log")
            continue
        bay_ids = sorted(set(oracle) | set(rw.totals_ms))
        for bay_id in bay_ids:
            err = abs(oracle.get(bay_id, 0) - rw.totals_ms.get(bay_id, 0))
            if err > max_error_ms:
                max_error_ms = err
            if err > allowed_ms:
                failures.append(
                    f"{label} bay {bay_id}: log replay off by {err} ms "
                    f"(oracle {oracle.get(bay_id, 0)}, agent {rw.totals_ms.get(bay_id, 0)})"
                )
        csv_path = run_dir / "csv" / f"rollup_{lot_id}_{_stamp(window.start)}.csv"
        if not csv_path.exists():
            failures.append(f"{label}: missing CSV {csv_path.name}")
            continue
        _, _, csv_records = read_csv_records(csv_path)
        if csv_records != rw.records:
            failures.append(_diff_records(label, "CSV", csv_records, rw.records))
        else:
            checks.append(f"{label}: CSV matches log replay ({len(csv_records)} bays)")
        stored = store.query_daily(lot_id, window.start)
        if stored is None:
            failures.append(f"{label}: hub store has no record for key {lot_id}:{window.start}")
        elif list(stored) != csv_records:
            failures.append(_diff_records(label, "hub store", list(stored), csv_records))
        else:
            checks.append(f"{label}: hub store matches CSV")
    checks.append(f"oracle diff over {len(windows)} windows: max {max_error_ms} ms")

    ok = not failures and max_error_ms <= allowed_ms
    return VerifyReport(ok, max_error_ms, allowed_ms, checks, failures)


def _stamp(window_start_ms: int) -> str:
    return datetime.fromtimestamp(window_start_ms / 1000, tz=timezone.utc).strftime(
        "%Y%m%dT%H%M%SZ"
    )


def _diff_records(
    label: str, what: str, got: list[RollupRecord], want: list[RollupRecord]
) -> str:
    got_by_bay = {r.bay_id: r for r in got}
    want_by_bay = {r.bay_id: r for r in want}
    for bay_id in sorted(set(got_by_bay) | set(want_by_bay)):
        if got_by_bay.get(bay_id) != want_by_bay.get(bay_id):
            return (
                f"{label} bay {bay_id}: {what} mismatch "
                f"(got {got_by_bay.get(bay_id)}, want {want_by_bay.get(bay_id)})"
            )
    return f"{label}: {what} record count mismatch ({len(got)} vs {len(want)})"


# ---------------------------------------------------------------------------
# reports


def load_ledger(run_dir: str | Path) -> TrafficLedger:
    path = Path(run_dir) / "ledger.json"
    return TrafficLedger.from_json(json.loads(path.read_text(encoding="utf-8")))


def _day_label(window_start_ms: int) -> str:
    return datetime.fromtimestamp(window_start_ms / 1000, tz=timezone.utc).strftime(
        "%Y-%m-%d %H:%M"
    )


def _per_bay_extremes(store: RollupStore, lot_id: str) -> dict[int, tuple[float, float]]:
    hours: dict[int, list[float]] = {}
    for stored in store.windows_for(lot_id):
        for record in stored.records:
            hours.setdefault(record.bay_id, []).append(record.occupation_time_sec / 3600.0)
    return {b: (min(h), max(h)) for b, h in sorted(hours.items())}


def build_report_markdown(store: RollupStore, ledger: TrafficLedger | None = None) -> str:
    lines: list[str] = ["# Run report", ""]
    for lot_id in store.lots() or ["(no data)"]:
        rows = store.windows_for(lot_id) if lot_id != "(no data)" else []
        lines.append(f"## Lot {lot_id}: fleet average occupied hours per window")
        lines.append("")
        lines.append("| window start (UTC) | fleet avg hours |")
        lines.append("| --- | --- |")
        for stored in rows:
            lines.append(
                f"| {_day_label(stored.window_start)} | {fleet_average_hours(stored.records):.4f} |"
            )
        lines.append("")
        if rows:
            lines.append(f"## Lot {lot_id}: per-bay occupied hours, min and max over the run")
            lines.append("")
            lines.append("| bay | min hours | max hours |")
            lines.append("| --- | --- | --- |")
            for bay_id, (lo, hi) in _per_bay_extremes(store, lot_id).items():
                lines.append(f"| {bay_id} | {lo:.4f} | {hi:.4f} |")
            lines.append("")
    if ledger is not None:
        ratio = ledger.reduction_ratio
        lines.append("## Traffic")
        lines.append("")
        lines.append(f"- per-event forwarding baseline: {ledger.raw_forward_bytes} bytes"
                     f" ({ledger.event_count} events)")
        lines.append(f"- aggregated uploads: {ledger.aggregated_bytes} bytes"
                     f" ({ledger.envelope_sends} sends)")
        lines.append(
            "- reduction ratio (aggregated/raw): "
            + (f"{ratio:.6f}" if ratio is not None else "undefined (no events)")
        )
        lines.append("")
    return "\n".join(lines)


def export_report(run_dir: str | Path, fmt: str) -> list[Path]:
    """Emit the per-day fleet-average and per-bay min/max tables."""
    if fmt not in ("csv", "markdown"):
        raise ValueError("format must be csv or markdown")
    run_dir = Path(run_dir)
    store = RollupStore(run_dir / "hub_store", fsync=False)
    out_paths: list[Path] = []
    if fmt == "markdown":
        ledger = None
        if (run_dir / "ledger.json").exists():
            ledger = load_ledger(run_dir)
        path = run_dir / "report.md"
        path.write_text(build_report_markdown(store, ledger), encoding="utf-8")
        return [path]
    daily_lines = ["lotId,windowStart,fleetAvgHours"]
    bays_lines = ["lotId,bayId,minHours,maxHours"]
    for lot_id in store.lots():
        for stored in store.windows_for(lot_id):
            daily_lines.append(
                f"{lot_id},{_stamp(stored.window_start)},"
                f"{fleet_average_hours(stored.records):.4f}"
            )
        for bay_id, (lo, hi) in _per_bay_extremes(store, lot_id).items():
            bays_lines.append(f"{lot_id},{bay_id},{lo:.4f},{hi:.4f}")
    daily_path = run_dir / "report_daily.csv"
    bays_path = run_dir / "report_bays.csv"
    daily_path.write_bytes(("\n".join(daily_lines) + "\n").encode("utf-8"))
    bays_path.write_bytes(("\n".join(bays_lines) + "\n").encode("utf-8"))
    out_paths.extend([daily_path, bays_path])
    return out_paths
