"""
Module: timestamps.py

Role of this file
-----------------
Hybrid logical clock values and the timestamp oracle (TSO).

Every state-changing request gets one HlcTimestamp from the TSO. The encoded
64-bit value doubles as the request's LSN, so "ordered by LSN" and "ordered by
time" are the same thing everywhere in the engine.

Who uses this file
------------------
- backbone/: every LogEntry carries a timestamp; time-ticks are TSO values.
- nodes/wal_logger.py: assigns LSNs and auto primary keys.
- nodes/query_node.py: the delta-consistency guard compares physical parts.
- storage/timetravel.py: restore targets are timestamps.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Optional

from logvec.utils.constants import LOGICAL_BITS, LOGICAL_MASK, MAX_PHYSICAL_MS


@dataclass(frozen=True, order=True)
class HlcTimestamp:
    """
    (physical ms, logical counter). Field order makes dataclass ordering the
    lexicographic order, which is also the order of the encoded integers.
    """

    physical: int
    logical: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.physical <= MAX_PHYSICAL_MS:
            raise ValueError(f"physical component out of range: {self.physical}")
        if not 0 <= self.logical <= LOGICAL_MASK:
            raise ValueError(f"logical component out of range: {self.logical}")

    def encode(self) -> int:
        return (self.physical << LOGICAL_BITS) | self.logical

    @classmethod
    def decode(cls, value: int) -> "HlcTimestamp":
        if value < 0:
            raise ValueError(f"encoded timestamp must be non-negative: {value}")
        return cls(physical=value >> LOGICAL_BITS, logical=value & LOGICAL_MASK)

    def __str__(self) -> str:
        return f"{self.physical}.{self.logical}"


ZERO_TS = HlcTimestamp(0, 0)


def hlc_tick(last: Optional[HlcTimestamp], now_ms: int) -> HlcTimestamp:
    """
    Next timestamp after `last` given the wall clock reading `now_ms`.

    The physical part never goes backwards. If the logical counter would
    overflow inside one millisecond, the physical part is pushed forward by
    one millisecond instead of failing.
    """
    if last is None or now_ms > last.physical:
        return HlcTimestamp(int(now_ms), 0)
    if last.logical < LOGICAL_MASK:
        return HlcTimestamp(last.physical, last.logical + 1)
    return HlcTimestamp(last.physical + 1, 0)


def staleness_ms(issue_ts: HlcTimestamp, consumed_ts: HlcTimestamp) -> int:
    """Issue time minus consumed time, on the physical components only."""
    return issue_ts.physical - consumed_ts.physical


class Tso:
    """
    Central timestamp oracle. One serialization point for the deployment.

    `now_ms` is any zero-argument callable returning milliseconds; the
    simulator passes a virtual clock, the CLI a system clock.
    """

    def __init__(self, now_ms: Callable[[], int], last: Optional[HlcTimestamp] = None) -> None:
        self._now_ms = now_ms
        self._last: Optional[HlcTimestamp] = last
        self._lock = threading.Lock()

    @property
    def last(self) -> Optional[HlcTimestamp]:
        return self._last

    def allocate(self) -> HlcTimestamp:
        with self._lock:
            ts = hlc_tick(self._last, int(self._now_ms()))
            self._last = ts
            return ts

    def observe(self, ts: HlcTimestamp) -> None:
        """Make every later allocation greater than `ts` (used after recovery)."""
        with self._lock:
            if self._last is None or ts > self._last:
                self._last = ts


def allocate_timestamp(tso: Tso) -> HlcTimestamp:
    return tso.allocate()
