"""
Module: log_entry.py

Role of this file
-----------------
Typed records carried by the log backbone. Every state change in the engine
is one LogEntry on one channel; vector searches are never logged.

Payloads are plain JSON-compatible dicts so the codec can store them as
canonical JSON after the fixed (kind, timestamp) prefix.

Payload shapes
--------------
- INSERT:    {"collection": id, "segment": id, "entity": Entity.to_dict()}
- DELETE:    {"collection": id, "segment": id, "pk": pk}
- DDL:       {"op": "create_collection" | "drop_collection" | "create_index", ...}
- COORD:     {"type": "segment_sealed" | "index_built" | "load_segment" | ..., ...}
- TIME_TICK: {}
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Dict

from logvec.models.schema import Entity, PrimaryKey
from logvec.models.timestamps import HlcTimestamp


class EntryKind(IntEnum):
    INSERT = 1
    DELETE = 2
    DDL = 3
    COORD = 4
    TIME_TICK = 5


@dataclass(frozen=True)
class LogEntry:
    kind: EntryKind
    timestamp: HlcTimestamp
    payload: Dict[str, Any] = field(default_factory=dict)

    @property
    def is_tick(self) -> bool:
        return self.kind is EntryKind.TIME_TICK

    @property
    def message_type(self) -> str:
        """`type` of a COORD entry, `op` of a DDL entry, kind name otherwise."""
        if self.kind is EntryKind.COORD:
            return str(self.payload.get("type", ""))
        if self.kind is EntryKind.DDL:
            return str(self.payload.get("op", ""))
        return self.kind.name.lower()

    def entity(self) -> Entity:
        if self.kind is not EntryKind.INSERT:
            raise ValueError(f"{self.kind.name} entry carries no entity")
        return Entity.from_dict(self.payload["entity"])

    # ------------------------------------------------------------------
    # Factories
    # ------------------------------------------------------------------

    @classmethod
    def insert(cls, ts: HlcTimestamp, collection_id: int, segment_id: int, entity: Entity) -> "LogEntry":
        return cls(
            EntryKind.INSERT,
            ts,
            {"collection": collection_id, "segment": segment_id, "entity": entity.to_dict()},
        )

    @classmethod
    def delete(cls, ts: HlcTimestamp, collection_id: int, segment_id: int, pk: PrimaryKey) -> "LogEntry":
        return cls(EntryKind.DELETE, ts, {"collection": collection_id, "segment": segment_id, "pk": pk})

    @classmethod
    def ddl(cls, ts: HlcTimestamp, op: str, **fields: Any) -> "LogEntry":
        return cls(EntryKind.DDL, ts, {"op": op, **fields})

    @classmethod
    def coord(cls, ts: HlcTimestamp, message_type: str, **fields: Any) -> "LogEntry":
        return cls(EntryKind.COORD, ts, {"type": message_type, **fields})

    @classmethod
    def time_tick(cls, ts: HlcTimestamp) -> "LogEntry":
        return cls(EntryKind.TIME_TICK, ts, {})
