"""Time sources: a manually stepped virtual scheduler and a warped real one.

Every component schedules work as (due epoch-ms, priority, callback).
Under the virtual scheduler the harness advances time explicitly, so
multi-day scenarios execute in milliseconds and two runs of the same
scenario execute the exact same callback sequence. The real scheduler
runs a dispatcher thread against the wall clock, optionally warped
(simulated seconds per real second).
"""

from __future__ import annotations

import heapq
import itertools
import logging
import threading
import time
from typing import Any, Callable

log = logging.getLogger(__name__)

# Same-instant ordering: window roll-ups run before injected faults,
# which run before message deliveries and ordinary timers.
PRIORITY_ROLLUP = 0
PRIORITY_FAULT = 1
PRIORITY_DELIVERY = 5


class Handle:
    """Cancellation token for one scheduled callback."""

    __slots__ = ("cancelled",)

    def __init__(self) -> None:
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class VirtualScheduler:
    """Deterministic event queue with an explicit clock.

    Callbacks run inline during run_until/run_for, in (due, priority,
    insertion) order; exceptions propagate to the caller driving time.
    """

    def __init__(self, start_ms: int) -> None:
        self._now = int(start_ms)
        self._heap: list[tuple[int, int, int, Handle, Callable[..., None], tuple]] = []
        self._seq = itertools.count()

    def now_ms(self) -> int:
        return self._now

    def call_at(
        self,
        due_ms: int,
        fn: Callable[..., None],
        *args: Any,
        priority: int = PRIORITY_DELIVERY,
    ) -> Handle:
        handle = Handle()
        due = max(int(due_ms), self._now)
        heapq.heappush(self._heap, (due, priority, next(self._seq), handle, fn, args))
        return handle

    def call_later(
        self,
        delay_ms: int,
        fn: Callable[..., None],
        *args: Any,
        priority: int = PRIORITY_DELIVERY,
    ) -> Handle:
        return self.call_at(self._now + max(0, int(delay_ms)), fn, *args, priority=priority)

    def post(self, fn: Callable[..., None], *args: Any) -> Handle:
        return self.call_at(self._now, fn, *args)

    def pending(self) -> int:
        return sum(1 for item in self._heap if not item[3].cancelled)

    def run_until(self, end_ms: int) -> None:
        """Execute every callback due at or before end_ms, then set now."""
        end = int(end_ms)
        while self._heap and self._heap[0][0] <= end:
            due, _prio, _seq, handle, fn, args = heapq.heappop(self._heap)
            self._now = max(self._now, due)
            if not handle.cancelled:
                fn(*args)
        self._now = max(self._now, end)

    def run_for(self, duration_ms: int) -> None:
        self.run_until(self._now + int(duration_ms))


class RealScheduler:
    """Dispatcher thread over the wall clock, optionally time-warped.

    now_ms() reads origin + elapsed*warp, so components schedule in
    simulated epoch milliseconds exactly as they do under the virtual
    scheduler. post() is safe from any thread (socket readers use it);
    all callbacks execute on the single dispatcher thread.
    """

    def __init__(self, *, warp: float = 1.0, origin_ms: int | None = None) -> None:
        if warp <= 0:
            raise ValueError("time warp must be positive")
        self._warp = float(warp)
        self._origin_ms = int(time.time() * 1000) if origin_ms is None else int(origin_ms)
        self._mono0 = time.monotonic()
        self._heap: list[tuple[int, int, int, Handle, Callable[..., None], tuple]] = []
        self._seq = itertools.count()
        self._cond = threading.Condition()
        self._stopped = False
        self._thread = threading.Thread(target=self._run, name="edgepark-sched", daemon=True)

    def now_ms(self) -> int:
        return self._origin_ms + int((time.monotonic() - self._mono0) * self._warp * 1000)

    def call_at(
        self,
        due_ms: int,
        fn: Callable[..., None],
        *args: Any,
        priority: int = PRIORITY_DELIVERY,
    ) -> Handle:
        handle = Handle()
        with self._cond:
            heapq.heappush(
                self._heap, (int(due_ms), priority, next(self._seq), handle, fn, args)
            )
            self._cond.notify()
        return handle

    def call_later(
        self,
        delay_ms: int,
        fn: Callable[..., None],
        *args: Any,
        priority: int = PRIORITY_DELIVERY,
    ) -> Handle:
        return self.call_at(self.now_ms() + max(0, int(delay_ms)), fn, *args, priority=priority)

    def post(self, fn: Callable[..., None], *args: Any) -> Handle:
        return self.call_at(self.now_ms(), fn, *args)

    def start(self) -> None:
        self._thread.start()

    def stop(self, *, join: bool = True) -> None:
        with self._cond:
            self._stopped = True
            self._cond.notify()
        if join and self._thread.is_alive():
            self._thread.join(timeout=5)

    def _run(self) -> None:
        while True:
            with self._cond:
                while True:
                    if self._stopped:
                        return
                    if not self._heap:
                        self._cond.wait()
                        continue
                    due = self._heap[0][0]
                    wait_real = (due - self.now_ms()) / self._warp / 1000.0
                    if wait_real > 0:
                        self._cond.wait(timeout=min(wait_real, 0.5))
                        continue
                    _due, _prio, _seq, handle, fn, args = heapq.heappop(self._heap)
                    break
            if handle.cancelled:
                continue
            try:
                fn(*args)
            except Exception:
                log.exception("scheduled callback failed")
