"""Virtual clock and event queue for the discrete-event core.

Events fire in (time, insertion order) priority: two events scheduled for
the same instant run in the order they were scheduled, which is what makes
identical runs produce identical traces.  Time never moves backwards, and
every scheduled event either fires or is explicitly cancelled.
"""

from __future__ import annotations

import heapq
from typing import Callable, Optional


class ScheduledEvent:
    __slots__ = ("at_ms", "seq", "fn", "args", "cancelled")

    def __init__(self, at_ms: float, seq: int, fn: Callable, args: tuple):
        self.at_ms = at_ms
        self.seq = seq
        self.fn = fn
        self.args = args
        self.cancelled = False

    def __lt__(self, other: "ScheduledEvent") -> bool:
        return (self.at_ms, self.seq) < (other.at_ms, other.seq)


class VirtualClock:
    def __init__(self, start_ms: float = 0.0):
        self.now_ms = start_ms
        self._heap: list[ScheduledEvent] = []
        self._seq = 0
        self.fired = 0
        self.cancelled = 0

    def schedule(self, at_ms: float, fn: Callable, *args) -> ScheduledEvent:
        if at_ms < self.now_ms:
            raise ValueError(f"schedule at {at_ms} before now {self.now_ms}")
        event = ScheduledEvent(at_ms, self._seq, fn, args)
        self._seq += 1
        heapq.heappush(self._heap, event)
        return event

    def cancel(self, event: ScheduledEvent) -> None:
        if not event.cancelled:
            event.cancelled = True
            self.cancelled += 1

    def peek_time(self) -> Optional[float]:
        self._drop_cancelled_head()
        return self._heap[0].at_ms if self._heap else None

    def _drop_cancelled_head(self) -> None:
        while self._heap and self._heap[0].cancelled:
            heapq.heappop(self._heap)

    def step(self) -> bool:
        """Run the next pending event; False when the queue is empty."""
        self._drop_cancelled_head()
        if not self._heap:
            return False
        event = heapq.heappop(self._heap)
        self.now_ms = event.at_ms
        self.fired += 1
        event.fn(*event.args)
        return True

    def run_until(self, end_ms: float) -> None:
        """Fire everything scheduled at or before ``end_ms``; time lands on
        ``end_ms``."""
        while True:
            self._drop_cancelled_head()
            if not self._heap or self._heap[0].at_ms > end_ms:
                break
            self.step()
        self.now_ms = max(self.now_ms, end_ms)

    def pending(self) -> int:
        return sum(1 for e in self._heap if not e.cancelled)
