"""
Deterministic event queue for workload runs.

Events fire in (time, insertion order); two events at the same millisecond
keep the order they were scheduled in, so a run depends only on its seed.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Tuple


@dataclass(frozen=True)
class SimEvent:
    at_ms: int
    kind: str
    payload: Dict[str, Any] = field(default_factory=dict)


class EventQueue:
    def __init__(self) -> None:
        self._heap: List[Tuple[int, int, SimEvent]] = []
        self._seq = itertools.count()

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, at_ms: int, kind: str, **payload: Any) -> SimEvent:
        event = SimEvent(int(at_ms), kind, payload)
        heapq.heappush(self._heap, (event.at_ms, next(self._seq), event))
        return event

    def peek(self) -> Optional[SimEvent]:
        return self._heap[0][2] if self._heap else None

    def pop(self) -> SimEvent:
        return heapq.heappop(self._heap)[2]

    def drain(self) -> Iterator[SimEvent]:
        while self._heap:
            yield self.pop()
