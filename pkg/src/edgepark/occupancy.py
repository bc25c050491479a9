"""Per-bay occupancy accounting: state table, event application, window roll-ups.

All accounting is integer epoch milliseconds; roll-up records carry whole
seconds (floored) plus the occupied fraction of the window rounded to four
decimal places. The state table is a plain ``dict[int, BayState]`` and the
functions here keep no state of their own; callers must serialize all
mutations of one table.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum

log = logging.getLogger(__name__)

MS_PER_SEC = 1_000
DEFAULT_ROLLUP_PERIOD_MS = 86_400_000


class BayStatus(str, Enum):
    FREE = "free"
    OCCUPIED = "occupied"
    # Only before the first snapshot or after explicit invalidation
    # (observation stream interrupted).
    UNKNOWN = "unknown"


class EventKind(str, Enum):
    SNAPSHOT = "snapshot"
    UPDATE = "update"


class ClockRegressionError(ValueError):
    """A supplied time precedes a bay's last transition timestamp."""


class InvariantViolationError(ValueError):
    """A value breaks one of the accounting invariants."""


@dataclass(frozen=True)
class OccupancyEvent:
    """One timestamped status observation, stamped by the receiving agent."""

    kind: EventKind
    ts: int
    lot_id: str
    bay_id: int
    status: BayStatus

    def __post_init__(self) -> None:
        if self.bay_id < 1:
            raise InvariantViolationError(f"bay id must be positive, got {self.bay_id}")
        if self.ts < 0:
            raise InvariantViolationError(f"event ts must be non-negative, got {self.ts}")


@dataclass
class BayState:
    """Mutable accounting state for a single bay.

    While status is OCCUPIED the in-progress interval (now minus
    last_transition_ts) is not part of accumulated_occupation_ms until a
    transition or an explicit flush adds it.
    """

    bay_id: int
    lot_id: str
    status: BayStatus
    last_transition_ts: int
    accumulated_occupation_ms: int = 0


@dataclass(frozen=True)
class RollupWindow:
    """Half-open accounting window [start, end) in epoch milliseconds."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.end <= self.start:
            raise InvariantViolationError(
                f"window end {self.end} must exceed start {self.start}"
            )

    @property
    def length_ms(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class RollupRecord:
    """Per-bay output of one window roll-up."""

    bay_id: int
    occupation_time_sec: int
    occupation_rate: float

    def __post_init__(self) -> None:
        if self.occupation_time_sec < 0:
            raise InvariantViolationError("occupation time must be non-negative")
        if not 0.0 <= self.occupation_rate <= 1.0:
            raise InvariantViolationError(
                f"occupation rate {self.occupation_rate} outside [0, 1]"
            )


def occupation_rate(occ_ms: int, window_ms: int) -> float:
    """Occupied fraction of a window, rounded half-up to 4 decimal places."""
    if window_ms <= 0:
        raise InvariantViolationError(f"window length must be positive, got {window_ms}")
    if occ_ms < 0 or occ_ms > window_ms:
        raise InvariantViolationError(
            f"occupation {occ_ms} ms outside [0, {window_ms}] ms window"
        )
    q = (Decimal(occ_ms) / Decimal(window_ms)).quantize(
        Decimal("0.0001"), rounding=ROUND_HALF_UP
    )
    return float(q)


def _warn(warnings: list[str] | None, message: str) -> None:
    log.warning(message)
    if warnings is not None:
        warnings.append(message)


def apply_event(
    table: dict[int, BayState],
    event: OccupancyEvent,
    warnings: list[str] | None = None,
) -> dict[int, BayState]:
    """Apply one observation to the table and return it.

    Snapshots (re)establish a bay: status and interval start are taken from
    the event, accumulated time is preserved (zero for a new bay) and never
    credited. Updates transition status; an occupied-to-anything transition
    credits the elapsed interval. Duplicate-status updates are idempotent
    and an update for an unknown bay creates it; both record a warning.
    """
    state = table.get(event.bay_id)
    if state is not None and event.ts < state.last_transition_ts:
        raise ClockRegressionError(
            f"event at {event.ts} precedes bay {event.bay_id} "
            f"last transition {state.last_transition_ts}"
        )

    if event.kind is EventKind.SNAPSHOT:
        if state is None:
            table[event.bay_id] = BayState(
                bay_id=event.bay_id,
                lot_id=event.lot_id,
                status=event.status,
                last_transition_ts=event.ts,
            )
        else:
            state.status = event.status
            state.last_transition_ts = event.ts
        return table

    if state is None:
        _warn(
            warnings,
            f"update for unknown bay {event.bay_id}; creating it as {event.status.value}",
        )
        table[event.bay_id] = BayState(
            bay_id=event.bay_id,
            lot_id=event.lot_id,
            status=event.status,
            last_transition_ts=event.ts,
        )
        return table

    if state.status is event.status:
        _warn(
            warnings,
            f"duplicate {event.status.value} update for bay {event.bay_id} ignored",
        )
        return table

    if state.status is BayStatus.OCCUPIED:
        state.accumulated_occupation_ms += event.ts - state.last_transition_ts
    state.status = event.status
    state.last_transition_ts = event.ts
    return table


def update_occupation_time(
    table: dict[int, BayState], now_ms: int
) -> dict[int, BayState]:
    """Flush in-progress occupancy of every occupied bay up to now_ms.

    Statuses never change. Raises ClockRegressionError (table untouched)
    if now_ms precedes any bay's last transition.
    """
    for state in table.values():
        if now_ms < state.last_transition_ts:
            raise ClockRegressionError(
                f"now {now_ms} precedes bay {state.bay_id} "
                f"last transition {state.last_transition_ts}"
            )
    for state in table.values():
        if state.status is BayStatus.OCCUPIED:
            state.accumulated_occupation_ms += now_ms - state.last_transition_ts
            state.last_transition_ts = now_ms
    return table


def rollup(
    table: dict[int, BayState], window: RollupWindow
) -> tuple[list[RollupRecord], dict[int, BayState]]:
    """Close a window: flush at window.end, emit records, reset accumulators.

    Occupancy spanning the boundary is truncated at window.end; its
    continuation accrues to the next window because statuses and interval
    starts survive the reset. Records are sorted by bay id.
    """
    update_occupation_time(table, window.end)
    records: list[RollupRecord] = []
    for bay_id in sorted(table):
        state = table[bay_id]
        sec = state.accumulated_occupation_ms // MS_PER_SEC
        records.append(
            RollupRecord(
                bay_id=bay_id,
                occupation_time_sec=sec,
                occupation_rate=occupation_rate(sec * MS_PER_SEC, window.length_ms),
            )
        )
        state.accumulated_occupation_ms = 0
    return records, table


def invalidate_statuses(
    table: dict[int, BayState], now_ms: int
) -> dict[int, BayState]:
    """Flush in-progress occupancy at now_ms, then mark every bay unknown.

    Used when the observation stream is interrupted: unknown bays accrue
    nothing until a snapshot re-establishes them, so unobserved intervals
    are never counted.
    """
    update_occupation_time(table, now_ms)
    for state in table.values():
        state.status = BayStatus.UNKNOWN
    return table
