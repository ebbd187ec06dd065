"""
Immutable sorted run of the entity -> segment map.

    magic "MSR1" | u64 count | u8 pk_type (0 = int64, 1 = string)
    then `count` pairs sorted by pk:
        int64 pk:  i64 pk | u64 segment_id
        string pk: u32 length | UTF-8 bytes | u64 segment_id

A segment id of TOMBSTONE_SEGMENT records that the pk was deleted. There is
no footer index: runs are small and are loaded whole, lookups bisect the
in-memory key array.
"""

from __future__ import annotations

import bisect
import struct
from typing import List, Optional, Sequence, Tuple

from logvec.models.errors import StorageError
from logvec.models.schema import PrimaryKey
from logvec.utils.constants import SORTED_RUN_MAGIC, TOMBSTONE_SEGMENT

_HEAD = struct.Struct("<4sQB")
_INT_PAIR = struct.Struct("<qQ")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")

PK_INT = 0
PK_STR = 1


class SortedRun:
    def __init__(self, pairs: Sequence[Tuple[PrimaryKey, int]]) -> None:
        ordered = sorted(pairs, key=lambda p: p[0])
        self._keys: List[PrimaryKey] = [p[0] for p in ordered]
        self._segments: List[int] = [p[1] for p in ordered]
        for a, b in zip(self._keys, self._keys[1:]):
            if a == b:
                raise ValueError(f"duplicate pk in sorted run: {a!r}")

    def __len__(self) -> int:
        return len(self._keys)

    def items(self) -> List[Tuple[PrimaryKey, int]]:
        return list(zip(self._keys, self._segments))

    def lookup(self, pk: PrimaryKey) -> Optional[int]:
        """Segment id, TOMBSTONE_SEGMENT, or None if the run knows nothing of pk."""
        i = bisect.bisect_left(self._keys, pk)
        if i < len(self._keys) and self._keys[i] == pk:
            return self._segments[i]
        return None

    # ------------------------------------------------------------------
    # Encoding
    # ------------------------------------------------------------------

    def to_bytes(self) -> bytes:
        is_str = bool(self._keys) and isinstance(self._keys[0], str)
        parts = [_HEAD.pack(SORTED_RUN_MAGIC, len(self._keys), PK_STR if is_str else PK_INT)]
        for pk, seg in zip(self._keys, self._segments):
            if is_str:
                raw = str(pk).encode("utf-8")
                parts.append(_U32.pack(len(raw)) + raw + _U64.pack(seg))
            else:
                parts.append(_INT_PAIR.pack(int(pk), seg))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SortedRun":
        if len(data) < _HEAD.size:
            raise StorageError("sorted run shorter than its header")
        magic, count, pk_type = _HEAD.unpack_from(data, 0)
        if magic != SORTED_RUN_MAGIC:
            raise StorageError(f"bad sorted run magic {magic!r}")
        pos = _HEAD.size
        pairs: List[Tuple[PrimaryKey, int]] = []
        for _ in range(count):
            if pk_type == PK_INT:
                pk, seg = _INT_PAIR.unpack_from(data, pos)
                pos += _INT_PAIR.size
            else:
                (n,) = _U32.unpack_from(data, pos)
                pos += _U32.size
                pk = data[pos:pos + n].decode("utf-8")
                pos += n
                (seg,) = _U64.unpack_from(data, pos)
                pos += _U64.size
            pairs.append((pk, seg))
        return cls(pairs)


def is_tombstone(segment_id: Optional[int]) -> bool:
    return segment_id == TOMBSTONE_SEGMENT
