"""
Periodic time-tick watermarks.

A tick is a TSO timestamp published on a channel while holding that channel's
writer lock, so it lands after every entry the writer has already accepted
and before anything it accepts later. Writers may register a callback that
runs under the same lock right before the tick is appended (loggers use it
to close idle segments at exactly the tick the data nodes will see).
"""

from __future__ import annotations

import threading
from typing import Callable, Dict, List, Optional

from loguru import logger

from logvec.backbone.broker import LogBroker
from logvec.models.log_entry import LogEntry
from logvec.models.timestamps import HlcTimestamp, Tso

TickHook = Callable[[HlcTimestamp], None]


class TimeTickEmitter:
    def __init__(self, broker: LogBroker, tso: Tso, interval_ms: int, now_ms: Callable[[], int]) -> None:
        if interval_ms <= 0:
            raise ValueError("tick interval must be > 0")
        self._broker = broker
        self._tso = tso
        self.interval_ms = int(interval_ms)
        self._now_ms = now_ms
        self._hooks: Dict[str, Optional[TickHook]] = {}
        self._last_emit_ms: Optional[int] = None
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def register(self, channel: str, hook: Optional[TickHook] = None) -> None:
        self._broker.create_channel(channel)
        with self._lock:
            self._hooks[channel] = hook

    def unregister(self, channel: str) -> None:
        with self._lock:
            self._hooks.pop(channel, None)

    @property
    def channels(self) -> List[str]:
        return sorted(self._hooks)

    def emit_channel(self, channel: str) -> HlcTimestamp:
        hook = self._hooks.get(channel)
        with self._broker.writer_lock(channel):
            ts = self._tso.allocate()
            if hook is not None:
                hook(ts)
            self._broker.publish(channel, LogEntry.time_tick(ts))
        return ts

    def emit_now(self) -> Dict[str, HlcTimestamp]:
        with self._lock:
            channels = sorted(self._hooks)
            self._last_emit_ms = int(self._now_ms())
        emitted = {ch: self.emit_channel(ch) for ch in channels}
        if emitted:
            logger.debug(f"time tick on {len(emitted)} channels")
        return emitted

    def maybe_emit(self) -> Dict[str, HlcTimestamp]:
        """Emit if at least one interval passed since the previous emission."""
        now = int(self._now_ms())
        if self._last_emit_ms is not None and now - self._last_emit_ms < self.interval_ms:
            return {}
        return self.emit_now()

    # ------------------------------------------------------------------
    # Wall-clock mode
    # ------------------------------------------------------------------

    def start(self) -> None:
        if self._thread is not None:
            return
        self._stop.clear()

        def _run() -> None:
            while not self._stop.wait(self.interval_ms / 1000.0):
                try:
                    self.emit_now()
                except Exception as exc:  # ticks are best effort
                    logger.warning(f"time tick failed: {exc}")

        self._thread = threading.Thread(target=_run, name="time-tick", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
            self._thread = None
