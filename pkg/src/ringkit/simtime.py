"""Discrete-event virtual clock: the single time source for device, link and host.

All timing in the simulator is integer microseconds of virtual time.  Nothing
in the core ever reads the wall clock, which is what makes runs replayable
bit-for-bit from a seed.
"""

from __future__ import annotations

import heapq
from typing import Callable


class EventLoop:
    """Priority-queue scheduler over virtual microseconds."""

    def __init__(self) -> None:
        self.now_us: int = 0
        self._heap: list[list] = []  # [t_us, seq, fn, alive]
        self._seq = 0

    def call_at(self, t_us: int, fn: Callable[[], None]) -> list:
        """Schedule fn at virtual time t_us (clamped to now); returns a cancel handle."""
        entry = [max(int(t_us), self.now_us), self._seq, fn, True]
        self._seq += 1
        heapq.heappush(self._heap, entry)
        return entry

    def call_later(self, delay_us: int, fn: Callable[[], None]) -> list:
        return self.call_at(self.now_us + int(delay_us), fn)

    @staticmethod
    def cancel(handle: list) -> None:
        handle[3] = False

    def peek_us(self) -> int | None:
        """Time of the next pending event, or None."""
        while self._heap and not self._heap[0][3]:
            heapq.heappop(self._heap)
        return self._heap[0][0] if self._heap else None

    def step(self) -> bool:
        """Run the next pending event; returns False when the queue is empty."""
        while self._heap:
            t_us, _, fn, alive = heapq.heappop(self._heap)
            if not alive:
                continue
            self.now_us = max(self.now_us, t_us)
            fn()
            return True
        return False

    def run_until(self, t_us: int) -> None:
        """Run every event scheduled at or before t_us, then settle now at t_us."""
        t_us = int(t_us)
        while True:
            nxt = self.peek_us()
            if nxt is None or nxt > t_us:
                break
            self.step()
        if t_us > self.now_us:
            self.now_us = t_us

    def run_for(self, dt_us: int) -> None:
        self.run_until(self.now_us + int(dt_us))
