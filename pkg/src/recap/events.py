"""A tiny deterministic discrete-event loop driving the virtual clock."""

from __future__ import annotations

import heapq
import itertools
from typing import Callable

# same-instant ordering: completions are written before VMs are torn down,
# teardown happens before new dispatches, monitors observe the settled state
PRIO_COMPLETE = 0
PRIO_RECORD = 1
PRIO_DESTROY = 2
PRIO_DISPATCH = 3
PRIO_MONITOR = 4


class EventLoop:
    def __init__(self, start: float = 0.0):
        self.now = float(start)
        self._queue: list[tuple[float, int, int, Callable[[], None]]] = []
        self._seq = itertools.count()

    def schedule(self, at: float, callback: Callable[[], None], priority: int = PRIO_DISPATCH) -> None:
        if at < self.now:
            raise ValueError(f"cannot schedule in the past ({at} < {self.now})")
        heapq.heappush(self._queue, (at, priority, next(self._seq), callback))

    def after(self, delay: float, callback: Callable[[], None], priority: int = PRIO_DISPATCH) -> None:
        self.schedule(self.now + delay, callback, priority)

    def pending(self) -> int:
        return len(self._queue)

    def peek(self) -> float | None:
        return self._queue[0][0] if self._queue else None

    def step(self) -> bool:
        if not self._queue:
            return False
        at, _, _, callback = heapq.heappop(self._queue)
        self.now = at
        callback()
        return True

    def run_until(self, t: float) -> None:
        """Process every event with time <= t, then park the clock at t."""
        while self._queue and self._queue[0][0] <= t:
            self.step()
        if t > self.now:
            self.now = t

    def run(self, max_events: int = 10_000_000) -> None:
        for _ in range(max_events):
            if not self.step():
                return
        raise RuntimeError("event budget exhausted; runaway periodic task?")
