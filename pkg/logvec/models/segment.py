"""
Module: segment.py

Role of this file
-----------------
Segment metadata. A segment is the unit of data placement and indexing:
GROWING while the data node appends WAL inserts to it, SEALED once it hits a
size threshold, goes idle, is sealed on request, or is the output of a merge.

The descriptor only carries routing information (where the binlogs, the delta
log and the index objects live), never row data.

Who uses this file
------------------
- coordinators/data.py: allocates, registers and retires descriptors.
- nodes/data_node.py, nodes/segment_buffer.py: progress, sealing.
- storage/checkpoint.py: checkpoints are lists of descriptors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional

from logvec.models.errors import SegmentSealedError
from logvec.models.timestamps import ZERO_TS, HlcTimestamp


class SegmentState(Enum):
    GROWING = "growing"
    SEALED = "sealed"


class SealTrigger(Enum):
    SIZE = "size"
    INACTIVITY = "inactivity"
    MERGE = "merge"
    MANUAL = "manual"


def _ts_or_none(value: Optional[int]) -> Optional[HlcTimestamp]:
    return None if value is None else HlcTimestamp.decode(int(value))


@dataclass
class SegmentDescriptor:
    segment_id: int
    collection_id: int
    shard_id: int
    channel: str
    state: SegmentState = SegmentState.GROWING
    row_count: int = 0
    byte_size: int = 0
    progress: HlcTimestamp = ZERO_TS
    slice_count: int = 0
    binlog_paths: Dict[str, str] = field(default_factory=dict)
    index_paths: Dict[str, str] = field(default_factory=dict)
    delta_path: Optional[str] = None
    # WAL offset of the first insert routed to this segment
    start_offset: int = 0
    seal_trigger: Optional[SealTrigger] = None
    sealed_ts: Optional[HlcTimestamp] = None
    retired_ts: Optional[HlcTimestamp] = None
    parents: List[int] = field(default_factory=list)
    successor: Optional[int] = None

    @property
    def is_sealed(self) -> bool:
        return self.state is SegmentState.SEALED

    @property
    def is_live(self) -> bool:
        return self.retired_ts is None

    def advance_progress(self, ts: HlcTimestamp) -> None:
        if ts > self.progress:
            self.progress = ts

    def record_rows(self, rows: int, nbytes: int) -> None:
        if self.is_sealed:
            raise SegmentSealedError(f"segment {self.segment_id} is sealed")
        self.row_count += rows
        self.byte_size += nbytes

    def seal(self, trigger: SealTrigger, ts: HlcTimestamp) -> bool:
        """Mark sealed. Returns False if it already was (double seal is a no-op)."""
        if self.is_sealed:
            return False
        self.state = SegmentState.SEALED
        self.seal_trigger = trigger
        self.sealed_ts = ts
        return True

    def to_dict(self) -> Dict[str, Any]:
        return {
            "segment_id": self.segment_id,
            "collection_id": self.collection_id,
            "shard_id": self.shard_id,
            "channel": self.channel,
            "state": self.state.value,
            "row_count": self.row_count,
            "byte_size": self.byte_size,
            "progress": self.progress.encode(),
            "slice_count": self.slice_count,
            "binlog_paths": dict(self.binlog_paths),
            "index_paths": dict(self.index_paths),
            "delta_path": self.delta_path,
            "start_offset": self.start_offset,
            "seal_trigger": None if self.seal_trigger is None else self.seal_trigger.value,
            "sealed_ts": None if self.sealed_ts is None else self.sealed_ts.encode(),
            "retired_ts": None if self.retired_ts is None else self.retired_ts.encode(),
            "parents": list(self.parents),
            "successor": self.successor,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SegmentDescriptor":
        trigger = data.get("seal_trigger")
        return cls(
            segment_id=int(data["segment_id"]),
            collection_id=int(data["collection_id"]),
            shard_id=int(data["shard_id"]),
            channel=str(data["channel"]),
            state=SegmentState(data.get("state", SegmentState.GROWING.value)),
            row_count=int(data.get("row_count", 0)),
            byte_size=int(data.get("byte_size", 0)),
            progress=HlcTimestamp.decode(int(data.get("progress", 0))),
            slice_count=int(data.get("slice_count", 0)),
            binlog_paths={str(k): str(v) for k, v in data.get("binlog_paths", {}).items()},
            index_paths={str(k): str(v) for k, v in data.get("index_paths", {}).items()},
            delta_path=data.get("delta_path"),
            start_offset=int(data.get("start_offset", 0)),
            seal_trigger=None if trigger is None else SealTrigger(trigger),
            sealed_ts=_ts_or_none(data.get("sealed_ts")),
            retired_ts=_ts_or_none(data.get("retired_ts")),
            parents=[int(p) for p in data.get("parents", [])],
            successor=data.get("successor"),
        )

    def copy(self) -> "SegmentDescriptor":
        return SegmentDescriptor.from_dict(self.to_dict())
