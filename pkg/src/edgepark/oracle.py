"""Brute-force occupancy oracle: direct interval enumeration over a trace.

Independent check of the state-machine accounting. It deliberately shares
no logic with apply_event/rollup: per bay it reconstructs the piecewise
constant status function ("the most recent event at each instant") and
measures its occupied portion inside the window. Keep it that way.
"""

from __future__ import annotations

from typing import Sequence

from .occupancy import BayStatus, OccupancyEvent, RollupWindow


class TraceOrderError(ValueError):
    """The trace is not sorted by timestamp."""


def oracle_occupancy(
    trace: Sequence[OccupancyEvent], window: RollupWindow
) -> dict[int, int]:
    """Per-bay occupied milliseconds within [window.start, window.end].

    A bay still occupied at window.end is truncated there. Every bay id
    appearing in the trace is present in the result, with 0 if it was
    never occupied inside the window.
    """
    prev_ts: int | None = None
    for event in trace:
        if prev_ts is not None and event.ts < prev_ts:
            raise TraceOrderError(f"trace not sorted by ts at {event.ts} < {prev_ts}")
        prev_ts = event.ts

    per_bay: dict[int, list[tuple[int, BayStatus]]] = {}
    for event in trace:
        per_bay.setdefault(event.bay_id, []).append((event.ts, event.status))

    totals: dict[int, int] = {}
    for bay_id, events in per_bay.items():
        total = 0
        for i, (ts, status) in enumerate(events):
            seg_end = events[i + 1][0] if i + 1 < len(events) else window.end
            if status is BayStatus.OCCUPIED:
                lo = max(ts, window.start)
                hi = min(seg_end, window.end)
                if hi > lo:
                    total += hi - lo
        totals[bay_id] = total
    return totals
