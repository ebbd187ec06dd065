"""
Delete log of a sealed segment: which pks were deleted and when.

    magic "MDL1" | u64 count | u8 pk_type (0 = int64, 1 = string)
    then `count` records sorted by (ts, pk):
        int64 pk:  i64 pk | u64 ts
        string pk: u32 length | UTF-8 bytes | u64 ts

Sealed binlogs are never rewritten; deletes that reach a segment after it
sealed live here. A row is deleted by a record with the same pk and a
timestamp greater than the row's LSN.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

from logvec.models.errors import StorageError
from logvec.models.schema import PrimaryKey
from logvec.models.timestamps import HlcTimestamp
from logvec.utils.constants import DELTA_MAGIC

_HEAD = struct.Struct("<4sQB")
_INT_REC = struct.Struct("<qQ")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


@dataclass
class DeltaLog:
    # pk -> encoded timestamps of every delete seen for it
    records: Dict[PrimaryKey, List[int]] = field(default_factory=dict)

    def __len__(self) -> int:
        return sum(len(v) for v in self.records.values())

    def add(self, pk: PrimaryKey, ts: HlcTimestamp) -> bool:
        """Record a delete. Returns False if this exact record was already there."""
        stamps = self.records.setdefault(pk, [])
        value = ts.encode()
        if value in stamps:
            return False
        stamps.append(value)
        stamps.sort()
        return True

    def merge(self, other: "DeltaLog") -> None:
        for pk, ts in other.entries():
            self.add(pk, ts)

    def entries(self) -> List[Tuple[PrimaryKey, HlcTimestamp]]:
        out = [(pk, HlcTimestamp.decode(ts)) for pk, stamps in self.records.items() for ts in stamps]
        out.sort(key=lambda r: (r[1], str(r[0])))
        return out

    def deleted_after(self, pk: PrimaryKey, row_lsn: HlcTimestamp, upto: Optional[HlcTimestamp] = None) -> bool:
        """True if some delete of pk is newer than the row (and not newer than `upto`)."""
        lo = row_lsn.encode()
        hi = None if upto is None else upto.encode()
        return any(ts > lo and (hi is None or ts <= hi) for ts in self.records.get(pk, ()))

    # ------------------------------------------------------------------
    # Encoding
    # ------------------------------------------------------------------

    def to_bytes(self) -> bytes:
        entries = self.entries()
        is_str = bool(entries) and isinstance(entries[0][0], str)
        parts = [_HEAD.pack(DELTA_MAGIC, len(entries), 1 if is_str else 0)]
        for pk, ts in entries:
            if is_str:
                raw = str(pk).encode("utf-8")
                parts.append(_U32.pack(len(raw)) + raw + _U64.pack(ts.encode()))
            else:
                parts.append(_INT_REC.pack(int(pk), ts.encode()))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "DeltaLog":
        if len(data) < _HEAD.size:
            raise StorageError("delta log shorter than its header")
        magic, count, pk_type = _HEAD.unpack_from(data, 0)
        if magic != DELTA_MAGIC:
            raise StorageError(f"bad delta log magic {magic!r}")
        log = cls()
        pos = _HEAD.size
        for _ in range(count):
            if pk_type == 0:
                pk, ts = _INT_REC.unpack_from(data, pos)
                pos += _INT_REC.size
            else:
                (n,) = _U32.unpack_from(data, pos)
                pos += _U32.size
                pk = data[pos:pos + n].decode("utf-8")
                pos += n
                (ts,) = _U64.unpack_from(data, pos)
                pos += _U64.size
            log.add(pk, HlcTimestamp.decode(ts))
        return log

    @classmethod
    def from_entries(cls, entries: Iterable[Tuple[PrimaryKey, HlcTimestamp]]) -> "DeltaLog":
        log = cls()
        for pk, ts in entries:
            log.add(pk, ts)
        return log
