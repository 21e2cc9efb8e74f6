"""Clock sources.

Every component takes time from one of these instead of calling time.*
directly, so a whole kernel can run on a virtual timeline and replay
byte-identically. Timestamps are integer nanoseconds throughout.
"""

from __future__ import annotations

import time

from .errors import ConfigurationError

NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000


class VirtualClock:
    """Manually advanced clock for deterministic runs."""

    def __init__(self, start_ns: int = 0):
        self._now = int(start_ns)

    def now_ns(self) -> int:
        return self._now

    def advance_to(self, t_ns: int) -> None:
        # time never moves backwards; equal is fine (settle loops re-read)
        if t_ns < self._now:
            raise ConfigurationError(f"clock cannot move back: {self._now} -> {t_ns}")
        self._now = int(t_ns)

    def advance(self, delta_ns: int) -> None:
        self.advance_to(self._now + int(delta_ns))


class MonotonicClock:
    """Wall clock for live mode, anchored at construction."""

    def __init__(self):
        self._base = time.monotonic_ns()

    def now_ns(self) -> int:
        return time.monotonic_ns() - self._base
