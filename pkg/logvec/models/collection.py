from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from logvec.models.schema import Schema
from logvec.models.timestamps import HlcTimestamp
from logvec.utils.constants import WAL_CHANNEL_PREFIX


def wal_channel_name(collection_id: int, shard_id: int) -> str:
    return f"{WAL_CHANNEL_PREFIX}/{collection_id}/shard-{shard_id}"


@dataclass
class CollectionDescriptor:
    collection_id: int
    name: str
    schema: Schema
    shard_count: int
    created_ts: HlcTimestamp
    channels: List[str] = field(default_factory=list)
    # IndexParams.to_dict() of the configured index, None = FLAT only
    index_params: Optional[Dict[str, Any]] = None
    loaded: bool = True

    def __post_init__(self) -> None:
        if self.shard_count < 1:
            raise ValueError("shard_count must be >= 1")
        if not self.channels:
            self.channels = [wal_channel_name(self.collection_id, s) for s in range(self.shard_count)]

    def channel_for(self, shard_id: int) -> str:
        return self.channels[shard_id]

    def shard_of_channel(self, channel: str) -> int:
        return self.channels.index(channel)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "collection_id": self.collection_id,
            "name": self.name,
            "schema": self.schema.to_dict(),
            "shard_count": self.shard_count,
            "created_ts": self.created_ts.encode(),
            "channels": list(self.channels),
            "index_params": self.index_params,
            "loaded": self.loaded,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CollectionDescriptor":
        return cls(
            collection_id=int(data["collection_id"]),
            name=str(data["name"]),
            schema=Schema.from_dict(data["schema"]),
            shard_count=int(data["shard_count"]),
            created_ts=HlcTimestamp.decode(int(data["created_ts"])),
            channels=list(data.get("channels", [])),
            index_params=data.get("index_params"),
            loaded=bool(data.get("loaded", True)),
        )
