"""
Module: broker.py

Role of this file
-----------------
In-process durable log broker: the only communication fabric between the
engine's components. A broker holds named channels; each channel is an
append-only sequence of LogEntry records with dense offsets.

Persistence
-----------
With a root directory, channel `name` lives in `log/{name}.mlog` (frames as
defined in codec.py), plus `log/{name}.meta.json` holding the offset of the
first retained entry after GC truncation. A publish is acknowledged only once
the frame has been written (and fsynced when requested). Without a root the
broker is memory only, which the unit tests use.

Ordering
--------
Every channel has a writer lock. Writers allocate the entry timestamp while
holding it (publish_stamped, or writer_lock around their own allocation), so
timestamps on a channel are strictly increasing and a time-tick T is a true
watermark: nothing after it on the channel carries a timestamp <= T.

Who uses this file
------------------
- every node and coordinator, through publish / subscribe.
- backbone/time_tick.py publishes watermarks under the writer lock.
- storage/timetravel.py reads WAL ranges and truncates expired prefixes.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, BinaryIO, Callable, Dict, List, Optional, Tuple

from loguru import logger

from logvec.backbone.codec import decode_frames, encode_frame
from logvec.models.errors import BrokerStorageError, ChannelOrderError, LogGapError, UnknownChannelError
from logvec.models.log_entry import EntryKind, LogEntry
from logvec.models.timestamps import HlcTimestamp, Tso
from logvec.storage.json_io import load_json, save_json


@dataclass
class SubscriberPosition:
    channel: str
    next_offset: int = 0
    last_time_tick: Optional[HlcTimestamp] = None

    def observe(self, offset: int, entry: LogEntry) -> None:
        if offset != self.next_offset:
            raise LogGapError(f"{self.channel}: expected offset {self.next_offset}, got {offset}")
        self.next_offset = offset + 1
        if entry.kind is EntryKind.TIME_TICK:
            if self.last_time_tick is None or entry.timestamp > self.last_time_tick:
                self.last_time_tick = entry.timestamp

    def to_dict(self) -> Dict[str, Any]:
        return {
            "channel": self.channel,
            "next_offset": self.next_offset,
            "last_time_tick": None if self.last_time_tick is None else self.last_time_tick.encode(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SubscriberPosition":
        tick = data.get("last_time_tick")
        return cls(
            channel=str(data["channel"]),
            next_offset=int(data.get("next_offset", 0)),
            last_time_tick=None if tick is None else HlcTimestamp.decode(int(tick)),
        )


class LogChannel:
    def __init__(self, name: str, path: Optional[Path] = None, fsync: bool = False) -> None:
        self.name = name
        self.lock = threading.RLock()
        self.changed = threading.Condition(self.lock)
        self._entries: List[LogEntry] = []
        self._base_offset = 0
        self._last_ts: Optional[HlcTimestamp] = None
        self._path = path
        self._fsync = fsync
        self._file: Optional[BinaryIO] = None
        if path is not None:
            self._open(path)

    # ------------------------------------------------------------------
    # Persistence
    # ------------------------------------------------------------------

    @property
    def _meta_path(self) -> Path:
        assert self._path is not None
        return self._path.with_name(self._path.name[: -len(".mlog")] + ".meta.json")

    def _open(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        if self._meta_path.exists():
            self._base_offset = int(load_json(self._meta_path).get("base_offset", 0))
        if path.exists():
            data = path.read_bytes()
            entries, valid = decode_frames(data, source=str(path))
            if valid < len(data):
                with path.open("r+b") as f:
                    f.truncate(valid)
            self._entries = entries
            if entries:
                self._last_ts = entries[-1].timestamp
            logger.debug(f"channel {self.name}: recovered {len(entries)} entries from {path}")
        self._file = path.open("ab")

    def close(self) -> None:
        with self.lock:
            if self._file is not None:
                self._file.close()
                self._file = None

    # ------------------------------------------------------------------
    # Writes
    # ------------------------------------------------------------------

    @property
    def base_offset(self) -> int:
        return self._base_offset

    @property
    def end_offset(self) -> int:
        return self._base_offset + len(self._entries)

    @property
    def last_timestamp(self) -> Optional[HlcTimestamp]:
        return self._last_ts

    def append(self, entry: LogEntry) -> int:
        with self.lock:
            if self._last_ts is not None and entry.timestamp <= self._last_ts:
                raise ChannelOrderError(
                    f"{self.name}: timestamp {entry.timestamp} is not after {self._last_ts}"
                )
            if self._file is not None:
                frame = encode_frame(entry)
                size_before = self._file.tell()
                try:
                    self._file.write(frame)
                    self._file.flush()
                    if self._fsync:
                        os.fsync(self._file.fileno())
                except OSError as exc:
                    try:
                        self._file.truncate(size_before)
                    except OSError:
                        pass
                    raise BrokerStorageError(f"{self.name}: append failed: {exc}") from exc
            offset = self.end_offset
            self._entries.append(entry)
            self._last_ts = entry.timestamp
            self.changed.notify_all()
            return offset

    def truncate_before(self, offset: int) -> int:
        """Drop every entry below `offset`. Returns how many were removed."""
        with self.lock:
            offset = min(offset, self.end_offset)
            drop = offset - self._base_offset
            if drop <= 0:
                return 0
            self._entries = self._entries[drop:]
            self._base_offset = offset
            if self._path is not None:
                tmp = self._path.with_suffix(".mlog.tmp")
                with tmp.open("wb") as f:
                    for e in self._entries:
                        f.write(encode_frame(e))
                if self._file is not None:
                    self._file.close()
                tmp.replace(self._path)
                save_json(self._meta_path, {"base_offset": self._base_offset})
                self._file = self._path.open("ab")
            logger.info(f"channel {self.name}: truncated {drop} entries, base offset now {offset}")
            return drop

    # ------------------------------------------------------------------
    # Reads
    # ------------------------------------------------------------------

    def read(self, from_offset: int, max_entries: Optional[int] = None) -> List[Tuple[int, LogEntry]]:
        with self.lock:
            if from_offset < self._base_offset:
                raise LogGapError(
                    f"{self.name}: offset {from_offset} was truncated (base offset {self._base_offset})"
                )
            start = from_offset - self._base_offset
            stop = len(self._entries) if max_entries is None else min(len(self._entries), start + max_entries)
            return [(self._base_offset + i, self._entries[i]) for i in range(start, stop)]


class Subscription:
    """
    One reader of one channel. Delivers every entry from its position exactly
    once and in order; the position can be saved and resumed from.
    """

    def __init__(self, channel: LogChannel, from_offset: int = 0, last_time_tick: Optional[HlcTimestamp] = None) -> None:
        self._channel = channel
        self.position = SubscriberPosition(channel.name, from_offset, last_time_tick)

    @property
    def channel(self) -> str:
        return self._channel.name

    @property
    def last_time_tick(self) -> Optional[HlcTimestamp]:
        return self.position.last_time_tick

    @property
    def lag(self) -> int:
        return max(0, self._channel.end_offset - self.position.next_offset)

    def poll(self, max_entries: Optional[int] = None) -> List[Tuple[int, LogEntry]]:
        if self.position.next_offset > self._channel.end_offset:
            return []
        batch = self._channel.read(self.position.next_offset, max_entries)
        for offset, entry in batch:
            self.position.observe(offset, entry)
        return batch

    def wait(self, timeout: Optional[float] = None) -> bool:
        """Block until an entry is available at the current position."""
        with self._channel.changed:
            return self._channel.changed.wait_for(
                lambda: self._channel.end_offset > self.position.next_offset, timeout=timeout
            )


class LogBroker:
    def __init__(self, root: Optional[str | os.PathLike] = None, fsync: bool = False) -> None:
        self._root = None if root is None else Path(root) / "log"
        self._fsync = fsync
        self._channels: Dict[str, LogChannel] = {}
        self._lock = threading.Lock()
        if self._root is not None and self._root.exists():
            for path in sorted(self._root.rglob("*.mlog")):
                name = path.relative_to(self._root).as_posix()[: -len(".mlog")]
                self._channels[name] = LogChannel(name, path, fsync)
            if self._channels:
                logger.info(f"broker: reopened {len(self._channels)} channels under {self._root}")

    def _path_for(self, name: str) -> Optional[Path]:
        return None if self._root is None else self._root / f"{name}.mlog"

    # ------------------------------------------------------------------
    # Channels
    # ------------------------------------------------------------------

    def create_channel(self, name: str) -> LogChannel:
        """Create `name` if missing. Idempotent."""
        if not name or name.startswith("/") or ".." in name.split("/"):
            raise ValueError(f"invalid channel name: {name!r}")
        with self._lock:
            ch = self._channels.get(name)
            if ch is None:
                ch = LogChannel(name, self._path_for(name), self._fsync)
                self._channels[name] = ch
                logger.debug(f"broker: created channel {name}")
            return ch

    def has_channel(self, name: str) -> bool:
        return name in self._channels

    def channel(self, name: str) -> LogChannel:
        try:
            return self._channels[name]
        except KeyError:
            raise UnknownChannelError(name) from None

    def channel_names(self) -> List[str]:
        return sorted(self._channels)

    def end_offset(self, name: str) -> int:
        return self.channel(name).end_offset

    def base_offset(self, name: str) -> int:
        return self.channel(name).base_offset

    def max_timestamp(self) -> Optional[HlcTimestamp]:
        stamps = [c.last_timestamp for c in self._channels.values() if c.last_timestamp is not None]
        return max(stamps) if stamps else None

    # ------------------------------------------------------------------
    # Publish / subscribe
    # ------------------------------------------------------------------

    def writer_lock(self, name: str) -> threading.RLock:
        return self.channel(name).lock

    def publish(self, name: str, entry: LogEntry) -> int:
        return self.channel(name).append(entry)

    def publish_stamped(
        self, name: str, tso: Tso, make_entry: Callable[[HlcTimestamp], LogEntry]
    ) -> Tuple[int, LogEntry]:
        """Allocate a timestamp and publish under the channel's writer lock."""
        ch = self.channel(name)
        with ch.lock:
            entry = make_entry(tso.allocate())
            return ch.append(entry), entry

    def subscribe(self, name: str, from_offset: int = 0) -> Subscription:
        ch = self.channel(name)
        if from_offset < 0:
            raise ValueError("from_offset must be >= 0")
        return Subscription(ch, from_offset)

    def read(self, name: str, from_offset: int = 0, max_entries: Optional[int] = None) -> List[Tuple[int, LogEntry]]:
        return self.channel(name).read(from_offset, max_entries)

    def truncate(self, name: str, before_offset: int) -> int:
        return self.channel(name).truncate_before(before_offset)

    def close(self) -> None:
        for ch in self._channels.values():
            ch.close()
