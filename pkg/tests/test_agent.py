"""Edge agent behavior: handshake, ingest, ping loop, roll-ups, uploads, recovery."""

import json

import pytest

from edgepark import eventlog, protocol
from edgepark.agent import (
    AgentConfig,
    EdgeAgentCore,
    csv_filename,
    read_csv_records,
    write_csv,
)
from edgepark.clock import VirtualScheduler
from edgepark.gateway import FaultPlan
from edgepark.occupancy import BayStatus, RollupRecord, RollupWindow, apply_event
from edgepark.transport import VirtualNetwork

from conftest import DAY_MS, EPOCH_MS, idle_trace, items_trace

HOUR_MS = 3_600_000


# ---------------------------------------------------------------------------
# handshake and ingest


def test_handshake_initializes_all_bays_free(rig_factory):
    rig = rig_factory()
    rig.run_for(0)
    assert rig.agent.handshaken
    assert len(rig.agent.table) == 22
    assert all(s.status is BayStatus.FREE for s in rig.agent.table.values())
    assert all(s.accumulated_occupation_ms == 0 for s in rig.agent.table.values())
    assert all(s.last_transition_ts == EPOCH_MS for s in rig.agent.table.values())


def test_empty_snapshot_leaves_empty_table_but_connected(rig_factory):
    rig = rig_factory(idle_trace(bays=0))
    rig.run_for(0)
    assert rig.agent.handshaken
    assert rig.agent.table == {}


def test_ingest_pair_credits_600_seconds(rig_factory):
    rig = rig_factory(items_trace([(100_000, 5, "occupied"), (700_000, 5, "free")]))
    rig.run_for(800_000)
    assert rig.agent.table[5].accumulated_occupation_ms == 600_000
    records, _ = eventlog.read_records(rig.agent_config.log_path)
    updates = [r for r in records if r.get("src") == "update"]
    assert [(r["ts"] - EPOCH_MS, r["status"]) for r in updates] == [
        (100_000, "occupied"),
        (700_000, "free"),
    ]


def test_duplicate_update_logged_state_unchanged_warning_counted(rig_factory):
    rig = rig_factory(
        items_trace([(1000, 3, "occupied")]), faults=FaultPlan(duplicate_updates=True)
    )
    rig.run_for(5000)
    assert rig.agent.table[3].status is BayStatus.OCCUPIED
    assert len([w for w in rig.agent.warnings if "duplicate" in w]) == 1
    records, _ = eventlog.read_records(rig.agent_config.log_path)
    assert len([r for r in records if r.get("src") == "update"]) == 2


def test_final_table_equals_log_replay(rig_factory):
    items = []
    status = {}
    ts = 10_000
    import random

    rng = random.Random(4)
    for _ in range(300):
        bay = rng.randint(1, 22)
        status[bay] = "occupied" if status.get(bay) != "occupied" else "free"
        items.append((ts, bay, status[bay]))
        ts += rng.randint(1, 40_000)
    rig = rig_factory(items_trace(items, duration_ms=DAY_MS))
    rig.run_for(ts + 1000)

    records, _ = eventlog.read_records(rig.agent_config.log_path)
    replayed = {}
    for record in records:
        assert "marker" not in record  # no boundary crossed in this run
        apply_event(replayed, eventlog.record_to_event(record))
    assert replayed == rig.agent.table


# ---------------------------------------------------------------------------
# ping loop


def test_ping_cadence_exact_count(rig_factory):
    rig = rig_factory()
    rig.sched.run_until(EPOCH_MS + 300_000)  # 5 minutes
    assert rig.gateway.pings_received == [1, 2, 3, 4, 5]
    assert rig.agent.pings_sent == 5


def test_silent_gateway_triggers_reconnect_after_three_missed_pongs(rig_factory):
    rig = rig_factory(faults=FaultPlan(mute_pongs_after=10))
    rig.sched.run_until(EPOCH_MS + 840_000)  # tick 14: third miss detected
    assert rig.gateway.pings_received[:13] == list(range(1, 14))
    assert max(rig.gateway.pings_received[:13]) == 13
    # Session was torn down and re-established at the same instant.
    assert rig.agent.gap_spans == [(EPOCH_MS + 840_000, EPOCH_MS + 840_000)]
    assert rig.agent.handshaken
    rig.sched.run_until(EPOCH_MS + 960_000)
    assert rig.gateway.pings_received[13:] == [1, 2]  # fresh session restarts seq


def test_ping_count_is_floor_of_elapsed(rig_factory):
    rig = rig_factory()
    rig.sched.run_until(EPOCH_MS + 750_000)  # 12.5 poll intervals
    assert rig.agent.pings_sent == 12


def test_pre_drop_accumulation_survives_reconnect(rig_factory):
    # Bay 6 parks twice; the 100 s observation gap at noon contains no
    # occupancy, so the day total must be exactly both stays.
    items = [
        (10 * HOUR_MS, 6, "occupied"),
        (11 * HOUR_MS, 6, "free"),
        (13 * HOUR_MS, 6, "occupied"),
        (14 * HOUR_MS, 6, "free"),
    ]
    rig = rig_factory(
        items_trace(items), faults=FaultPlan(disconnects=((12 * HOUR_MS, 100_000),))
    )
    rig.sched.run_until(EPOCH_MS + DAY_MS)
    assert rig.agent.gap_spans == [(EPOCH_MS + 12 * HOUR_MS, EPOCH_MS + 12 * HOUR_MS + 100_000)]
    path = rig.agent_config.csv_dir / "rollup_LOT-A_20181119T000000Z.csv"
    rows = dict(line.split(",", 1) for line in path.read_text().splitlines()[1:])
    assert rows["6"] == "7200,0.0833"


def test_mismatched_pong_counts_as_missing(tmp_path):
    sched = VirtualScheduler(EPOCH_MS)
    net = VirtualNetwork(sched)
    sessions = []

    def accept(conn):
        sessions.append(conn)
        conn.on_message = lambda msg: _gw_handle(conn, msg)
        conn.on_close = lambda: None

    def _gw_handle(conn, msg):
        if msg["type"] == "hello":
            conn.send(protocol.bays_message("LOT", [(1, "free")]))
        elif msg["type"] == "ping":
            conn.send(protocol.pong_message(msg["seq"] + 1000))  # always wrong

    net.listen("sim://gw", accept)
    config = AgentConfig(
        gateway_address="sim://gw",
        cloud_address="sim://hub",
        log_path=tmp_path / "agent.log",
        csv_dir=tmp_path / "csv",
        clock_mode="virtual",
        rollup_epoch_ms=EPOCH_MS,
    )
    agent = EdgeAgentCore(sched, net, config)
    agent.start()
    sched.run_until(EPOCH_MS + 239_000)
    assert agent.missed_pongs == 2  # wrong seqs never matched
    sched.run_until(EPOCH_MS + 240_000)  # third strike: session replaced
    assert len(sessions) == 2


def test_malformed_snapshot_triggers_reconnect(tmp_path):
    sched = VirtualScheduler(EPOCH_MS)
    net = VirtualNetwork(sched)
    hellos = []

    def accept(conn):
        def handle(msg):
            if msg["type"] == "hello":
                hellos.append(msg)
                if len(hellos) == 1:
                    conn.send({"type": "bays", "data": "not-a-list"})
                else:
                    conn.send(protocol.bays_message("LOT", [(1, "free")]))

        conn.on_message = handle
        conn.on_close = lambda: None

    net.listen("sim://gw", accept)
    config = AgentConfig(
        gateway_address="sim://gw",
        cloud_address="sim://hub",
        log_path=tmp_path / "agent.log",
        csv_dir=tmp_path / "csv",
        clock_mode="virtual",
        rollup_epoch_ms=EPOCH_MS,
    )
    agent = EdgeAgentCore(sched, net, config)
    agent.start()
    sched.run_until(EPOCH_MS + 5000)
    assert any("malformed snapshot" in w for w in agent.warnings)
    assert len(hellos) >= 2  # reconnected after the protocol error
    assert agent.handshaken


def test_clock_regression_event_logged_as_rejected(rig_factory):
    rig = rig_factory(items_trace([(1000, 3, "occupied")]))
    rig.run_for(2000)
    # Force a future transition stamp, then deliver another update for bay 3.
    rig.agent.table[3].last_transition_ts = EPOCH_MS + 10_000_000
    rig.agent._on_update(
        {"type": "baysUpdate", "lotId": "LOT-A", "bay": {"id": 3, "status": "free"}}
    )
    assert rig.agent.rejected_events == 1
    assert rig.agent.table[3].status is BayStatus.OCCUPIED  # untouched
    records, _ = eventlog.read_records(rig.agent_config.log_path)
    assert records[-1].get("rejected") is True


def test_unresponsive_gateway_handshake_times_out(tmp_path):
    sched = VirtualScheduler(EPOCH_MS)
    net = VirtualNetwork(sched)
    accepted = []
    net.listen("sim://gw", lambda conn: accepted.append(conn))  # never replies
    config = AgentConfig(
        gateway_address="sim://gw",
        cloud_address="sim://hub",
        log_path=tmp_path / "agent.log",
        csv_dir=tmp_path / "csv",
        clock_mode="virtual",
        rollup_epoch_ms=EPOCH_MS,
    )
    agent = EdgeAgentCore(sched, net, config)
    agent.start()
    sched.run_until(EPOCH_MS + 200_000)
    assert not agent.handshaken
    assert len(accepted) >= 3  # timed out and retried with backoff


# ---------------------------------------------------------------------------
# roll-up schedule and CSV


def test_idle_day_produces_all_zero_csv(rig_factory):
    rig = rig_factory()
    rig.sched.run_until(EPOCH_MS + DAY_MS)
    path = rig.agent_config.csv_dir / "rollup_LOT-A_20181119T000000Z.csv"
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "bayId,occupationTime,occupationRate"
    assert len(lines) == 23
    assert all(line.endswith(",0,0.0000") for line in lines[1:])


def test_flush_marker_and_reseed_written_at_boundary(rig_factory):
    rig = rig_factory(items_trace([(1000, 4, "occupied")]))
    rig.sched.run_until(EPOCH_MS + DAY_MS)
    records, _ = eventlog.read_records(rig.agent_config.log_path)
    markers = [r for r in records if r.get("marker") == "flush"]
    assert markers == [{"ts": EPOCH_MS + DAY_MS, "marker": "flush", "windowStart": EPOCH_MS}]
    reseed = [r for r in records if r.get("src") == "snapshot" and r["ts"] == EPOCH_MS + DAY_MS]
    assert len(reseed) == 22
    assert {r["status"] for r in reseed} == {"free", "occupied"}


def test_write_csv_empty_records_is_header_only(tmp_path):
    path = write_csv([], RollupWindow(EPOCH_MS, EPOCH_MS + DAY_MS), "LOT", tmp_path)
    assert path.read_bytes() == b"bayId,occupationTime,occupationRate\n"


def test_write_csv_golden_line(tmp_path):
    records = [RollupRecord(1, 27_000, 0.3125)]
    path = write_csv(records, RollupWindow(EPOCH_MS, EPOCH_MS + DAY_MS), "LOT", tmp_path)
    assert path.name == "rollup_LOT_20181119T000000Z.csv"
    assert path.read_bytes() == b"bayId,occupationTime,occupationRate\n1,27000,0.3125\n"


def test_write_csv_is_deterministic(tmp_path):
    records = [RollupRecord(1, 5, 0.0001), RollupRecord(2, 86_400, 1.0)]
    window = RollupWindow(EPOCH_MS, EPOCH_MS + DAY_MS)
    first = write_csv(records, window, "LOT", tmp_path).read_bytes()
    second = write_csv(records, window, "LOT", tmp_path).read_bytes()
    assert first == second


def test_write_csv_rejects_unsorted(tmp_path):
    records = [RollupRecord(2, 0, 0.0), RollupRecord(1, 0, 0.0)]
    with pytest.raises(ValueError):
        write_csv(records, RollupWindow(0, 1000), "LOT", tmp_path)


def test_read_csv_records_roundtrip(tmp_path):
    records = [RollupRecord(1, 27_000, 0.3125), RollupRecord(21, 0, 0.0)]
    window = RollupWindow(EPOCH_MS, EPOCH_MS + DAY_MS)
    path = write_csv(records, window, "LOT-A", tmp_path)
    lot, start, parsed = read_csv_records(path)
    assert (lot, start) == ("LOT-A", EPOCH_MS)
    assert parsed == records


def test_csv_filename_uses_utc_basic_format():
    assert csv_filename("LOT-A", EPOCH_MS) == "rollup_LOT-A_20181119T000000Z.csv"


def test_csv_write_failure_parks_envelope_in_dead_letter(rig_factory, monkeypatch):
    rig = rig_factory(items_trace([(1000, 2, "occupied")]))

    def boom(*args, **kwargs):
        raise OSError("disk full")

    monkeypatch.setattr("edgepark.agent.write_csv", boom)
    rig.sched.run_until(EPOCH_MS + DAY_MS)
    dead = list((rig.agent_config.csv_dir / "deadletter").glob("*.envelope.json"))
    assert len(dead) == 1
    envelope = json.loads(dead[0].read_text())
    assert envelope["key"] == f"LOT-A:{EPOCH_MS}"
    # The reset still happened: the next window starts from zero accumulation.
    assert all(s.accumulated_occupation_ms == 0 for s in rig.agent.table.values())
    assert rig.agent.window_start == EPOCH_MS + DAY_MS


# ---------------------------------------------------------------------------
# uploads


def test_upload_single_send_single_ack(rig_factory):
    rig = rig_factory(rollup_period_sec=3600)
    rig.sched.run_until(EPOCH_MS + HOUR_MS)
    assert rig.agent.upload_sends == 1
    assert len(rig.store) == 1
    assert rig.store.query_daily("LOT-A", EPOCH_MS) is not None


def test_upload_retries_until_hub_comes_up(tmp_path):
    from conftest import SimRig

    rig = SimRig(tmp_path, idle_trace(), rollup_period_sec=3600)
    rig.hub.stop()
    rig.net.unlisten("sim://hub")
    rig.sched.run_until(EPOCH_MS + HOUR_MS + 2500)  # two refused connects
    assert rig.agent.upload_sends == 0
    assert rig.agent.upload_queue
    rig.net.listen("sim://hub", rig.hub._accept)
    rig.sched.run_until(EPOCH_MS + HOUR_MS + 10_000)
    assert rig.agent.upload_sends == 1
    assert len(rig.store) == 1


def test_dropped_acks_cause_retries_but_single_store(rig_factory):
    rig = rig_factory(rollup_period_sec=3600, drop_acks=2)
    rig.sched.run_until(EPOCH_MS + HOUR_MS + 60_000)
    assert rig.agent.upload_sends == 3  # initial send plus two retries
    assert len(rig.store) == 1
    store_file = rig.store.store_dir / "LOT-A.jsonl"
    assert len(store_file.read_text().strip().splitlines()) == 1


# ---------------------------------------------------------------------------
# recovery


def make_agent(tmp_path, sched=None, **overrides):
    sched = sched or VirtualScheduler(EPOCH_MS)
    net = VirtualNetwork(sched)
    config = AgentConfig(
        gateway_address="sim://nowhere",
        cloud_address="sim://nohub",
        log_path=tmp_path / "agent.log",
        csv_dir=tmp_path / "csv",
        clock_mode="virtual",
        rollup_epoch_ms=overrides.pop("rollup_epoch_ms", EPOCH_MS),
        **overrides,
    )
    return EdgeAgentCore(sched, net, config), sched


def test_recover_empty_log_starts_empty(tmp_path):
    (tmp_path / "agent.log").write_bytes(b"")
    agent, _ = make_agent(tmp_path)
    agent.start()
    assert agent.table == {}
    assert not agent.recovered


def test_recover_replays_only_after_last_flush_marker(tmp_path):
    log = eventlog.EventLogWriter(tmp_path / "agent.log")
    early = EPOCH_MS - HOUR_MS
    log.append(
        eventlog.event_record(
            eventlog.record_to_event(
                {"ts": early, "lotId": "L", "bayId": 1, "status": "occupied", "src": "update"}
            )
        )
    )
    log.append(eventlog.flush_record(EPOCH_MS - 1800_000, EPOCH_MS - DAY_MS))
    for offset, status in ((60_000, "occupied"), (120_000, "free"), (180_000, "occupied")):
        log.append(
            {"ts": EPOCH_MS - 1800_000 + offset, "lotId": "L", "bayId": 2,
             "status": status, "src": "update"}
        )
    log.close()

    agent, _ = make_agent(tmp_path, rollup_epoch_ms=None)
    agent.start()
    assert agent.recovered
    assert 1 not in agent.table  # pre-marker history excluded
    assert agent.window_start == EPOCH_MS - 1800_000
    # 60 s completed inside the window, plus the still-occupied interval
    # flushed when recovery closed the observation stream at start time.
    assert agent.table[2].accumulated_occupation_ms == 60_000 + 1_620_000
    assert agent.table[2].status is BayStatus.UNKNOWN
    records, _ = eventlog.read_records(tmp_path / "agent.log")
    assert records[-1]["marker"] == "disconnect"


def test_recover_tolerates_torn_tail(tmp_path):
    log = eventlog.EventLogWriter(tmp_path / "agent.log")
    log.append(
        {"ts": EPOCH_MS - 5000, "lotId": "L", "bayId": 1, "status": "occupied", "src": "update"}
    )
    log.close()
    with open(tmp_path / "agent.log", "ab") as fh:
        fh.write(b'{"ts": 99, "lotId"')
    agent, _ = make_agent(tmp_path)
    agent.start()
    assert agent.table[1].accumulated_occupation_ms == 5000  # flushed at recovery
    assert any("skipped 1" in w for w in agent.warnings)


def test_recovery_requeues_existing_csvs(tmp_path):
    csv_dir = tmp_path / "csv"
    write_csv(
        [RollupRecord(1, 100, 0.0012)],
        RollupWindow(EPOCH_MS - DAY_MS, EPOCH_MS),
        "LOT-A",
        csv_dir,
    )
    log = eventlog.EventLogWriter(tmp_path / "agent.log")
    log.append(eventlog.flush_record(EPOCH_MS, EPOCH_MS - DAY_MS))
    log.close()
    agent, _ = make_agent(tmp_path)
    agent.start()
    assert [p.key for p in agent.upload_queue] == [f"LOT-A:{EPOCH_MS - DAY_MS}"]
