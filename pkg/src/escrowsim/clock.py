from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Callable


@dataclass(order=True)
class _Scheduled:
    at: float
    seq: int
    action: Callable[[], None] = field(compare=False)
    label: str = field(compare=False, default="")
    cancelled: bool = field(compare=False, default=False)


class ScenarioClock:
    """Simulated time plus a queue of scheduled callbacks.

    Time never decreases. Callbacks due at the same instant run in the order
    they were scheduled.
    """

    def __init__(self, start: float = 0.0):
        self.now = float(start)
        self._pending: list[_Scheduled] = []
        self._seq = itertools.count()

    def schedule(self, at: float, action: Callable[[], None], label: str = "") -> _Scheduled:
        if at < self.now:
            raise ValueError(f"cannot schedule at {at} before now={self.now}")
        item = _Scheduled(float(at), next(self._seq), action, label)
        heapq.heappush(self._pending, item)
        return item

    def schedule_in(self, delay: float, action: Callable[[], None], label: str = "") -> _Scheduled:
        return self.schedule(self.now + delay, action, label)

    @staticmethod
    def cancel(item: _Scheduled) -> None:
        item.cancelled = True

    def advance_to(self, t: float) -> None:
        if t < self.now:
            raise ValueError(f"time cannot go backwards ({t} < {self.now})")
        self.now = float(t)

    def next_time(self) -> float | None:
        while self._pending and self._pending[0].cancelled:
            heapq.heappop(self._pending)
        return self._pending[0].at if self._pending else None

    def run_until(self, t: float) -> int:
        """Run every callback due at or before ``t``; leaves ``now`` at ``t``."""
        ran = 0
        while True:
            nxt = self.next_time()
            if nxt is None or nxt > t:
                break
            item = heapq.heappop(self._pending)
            self.now = item.at
            item.action()
            ran += 1
        self.advance_to(max(t, self.now))
        return ran

    def __len__(self) -> int:
        return sum(not item.cancelled for item in self._pending)
