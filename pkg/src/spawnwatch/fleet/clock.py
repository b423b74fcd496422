"""Injectable clocks: simulated for deterministic runs, wall for live mode."""

from __future__ import annotations

import time
from typing import Protocol


class Clock(Protocol):
    def now(self) -> float: ...


class SimClock:
    """Manually advanced clock driving simulation-mode components."""

    def __init__(self, start: float = 0.0):
        self._now = start

    def now(self) -> float:
        return self._now

    def advance(self, dt: float) -> None:
        if dt < 0:
            raise ValueError("clock cannot go backwards")
        self._now += dt


class WallClock:
    def now(self) -> float:
        return time.time()
