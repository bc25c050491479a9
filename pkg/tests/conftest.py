"""Shared fixtures and helpers for the test suite."""

from __future__ import annotations

import pytest

from edgepark.agent import AgentConfig, BackoffPolicy, EdgeAgentCore
from edgepark.clock import VirtualScheduler
from edgepark.gateway import (
    FaultPlan,
    GatewayConfig,
    GatewayCore,
    SimTrace,
    TraceItem,
)
from edgepark.harness import GATEWAY_ADDRESS, HUB_ADDRESS, ScenarioConfig
from edgepark.hub import HubCore, RollupStore
from edgepark.occupancy import BayStatus
from edgepark.transport import VirtualNetwork

# 2018-11-19T00:00:00Z, a Monday: the start of the reproduced week.
EPOCH_MS = 1_542_585_600_000
DAY_MS = 86_400_000


def make_scenario(**overrides) -> ScenarioConfig:
    values = dict(
        name="test",
        seed=0,
        lot_id="LOT-A",
        bays=22,
        mean_occupied_min=450.0,
        mean_free_min=990.0,
        days=1,
        start_ms=EPOCH_MS,
    )
    values.update(overrides)
    return ScenarioConfig(**values)


def idle_trace(bays: int = 22, duration_ms: int = DAY_MS, lot_id: str = "LOT-A") -> SimTrace:
    return SimTrace(
        lot_id=lot_id,
        bay_count=bays,
        duration_ms=duration_ms,
        initial={b: BayStatus.FREE for b in range(1, bays + 1)},
        items=(),
    )


def items_trace(
    items: list[tuple[int, int, str]],
    bays: int = 22,
    duration_ms: int = DAY_MS,
    lot_id: str = "LOT-A",
) -> SimTrace:
    return SimTrace(
        lot_id=lot_id,
        bay_count=bays,
        duration_ms=duration_ms,
        initial={b: BayStatus.FREE for b in range(1, bays + 1)},
        items=tuple(TraceItem(ts, bay, BayStatus(status)) for ts, bay, status in items),
    )


class SimRig:
    """Gateway + hub + agent wired in-process under one virtual clock."""

    def __init__(
        self,
        tmp_path,
        trace: SimTrace,
        *,
        faults: FaultPlan | None = None,
        poll_interval_sec: int = 60,
        rollup_period_sec: int = 86_400,
        drop_acks: int = 0,
        backoff: BackoffPolicy | None = None,
        start_agent: bool = True,
    ) -> None:
        self.sched = VirtualScheduler(EPOCH_MS)
        self.net = VirtualNetwork(self.sched)
        self.trace = trace
        gw_config = GatewayConfig(
            listen_address=GATEWAY_ADDRESS,
            lot_id=trace.lot_id,
            bay_count=trace.bay_count,
            faults=faults or FaultPlan(),
        )
        self.gateway = GatewayCore(self.sched, self.net, gw_config, trace)
        self.store = RollupStore(tmp_path / "hub_store", fsync=False)
        self.hub = HubCore(self.sched, self.net, self.store, HUB_ADDRESS, drop_acks=drop_acks)
        self.agent_config = AgentConfig(
            gateway_address=GATEWAY_ADDRESS,
            cloud_address=HUB_ADDRESS,
            log_path=tmp_path / "agent.log",
            csv_dir=tmp_path / "csv",
            poll_interval_sec=poll_interval_sec,
            rollup_period_sec=rollup_period_sec,
            clock_mode="virtual",
            reconnect_backoff=backoff or BackoffPolicy(1000, 1.0, 1000),
            rollup_epoch_ms=EPOCH_MS,
        )
        self.agent = EdgeAgentCore(self.sched, self.net, self.agent_config)
        self.hub.start()
        self.gateway.start()
        if start_agent:
            self.agent.start()

    def run_for(self, ms: int) -> None:
        self.sched.run_for(ms)


@pytest.fixture
def rig_factory(tmp_path):
    def build(trace: SimTrace | None = None, **kwargs) -> SimRig:
        return SimRig(tmp_path, trace if trace is not None else idle_trace(), **kwargs)

    return build
