"""
Module: checkpoint.py

Role of this file
-----------------
Checkpoints of a collection's segment map. A checkpoint is routing
information only: the live sealed segment descriptors (pointing at binlogs
and delta logs that are shared with every other checkpoint referencing
them) and, per WAL channel, the offset to resume replay from. Everything
logged at or after that offset may not be in any listed segment yet.

Stored as canonical JSON under
`collection/{cid}/checkpoint/checkpoint-{ts}.json`, where ts is the encoded
checkpoint timestamp. Writing the same checkpoint twice yields the same
bytes.

Who uses this file
------------------
- coordinators/data.py writes checkpoints on the configured cadence.
- storage/timetravel.py restores from them and garbage-collects them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from loguru import logger

from logvec.models.segment import SegmentDescriptor
from logvec.models.timestamps import HlcTimestamp
from logvec.storage.json_io import canonical_json, parse_json
from logvec.storage.object_store import ObjectStore
from logvec.utils.retry import with_retries


def checkpoint_prefix(collection_id: int) -> str:
    return f"collection/{collection_id}/checkpoint/"


def checkpoint_key(collection_id: int, ts: HlcTimestamp) -> str:
    return f"{checkpoint_prefix(collection_id)}checkpoint-{ts.encode()}.json"


@dataclass
class Checkpoint:
    collection_id: int
    checkpoint_ts: HlcTimestamp
    segments: List[SegmentDescriptor] = field(default_factory=list)
    replay_from: Dict[str, int] = field(default_factory=dict)
    # last time-tick of every channel at checkpoint time
    watermarks: Dict[str, int] = field(default_factory=dict)

    @property
    def key(self) -> str:
        return checkpoint_key(self.collection_id, self.checkpoint_ts)

    def segment_ids(self) -> List[int]:
        return [d.segment_id for d in self.segments]

    def referenced_keys(self) -> List[str]:
        keys: List[str] = []
        for d in self.segments:
            keys.extend(d.binlog_paths.values())
            keys.extend(d.index_paths.values())
            if d.delta_path:
                keys.append(d.delta_path)
        return sorted(keys)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "collection_id": self.collection_id,
            "checkpoint_ts": self.checkpoint_ts.encode(),
            "segments": [d.to_dict() for d in sorted(self.segments, key=lambda d: d.segment_id)],
            "replay_from": dict(sorted(self.replay_from.items())),
            "watermarks": dict(sorted(self.watermarks.items())),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Checkpoint":
        return cls(
            collection_id=int(data["collection_id"]),
            checkpoint_ts=HlcTimestamp.decode(int(data["checkpoint_ts"])),
            segments=[SegmentDescriptor.from_dict(d) for d in data.get("segments", [])],
            replay_from={str(k): int(v) for k, v in data.get("replay_from", {}).items()},
            watermarks={str(k): int(v) for k, v in data.get("watermarks", {}).items()},
        )


def write_checkpoint(store: ObjectStore, checkpoint: Checkpoint) -> str:
    payload = canonical_json(checkpoint.to_dict())
    key = checkpoint.key
    with_retries(lambda: store.put(key, payload), what=f"checkpoint {key}")
    logger.info(
        f"checkpoint {checkpoint.checkpoint_ts} of collection {checkpoint.collection_id}: "
        f"{len(checkpoint.segments)} segments"
    )
    return key


def load_checkpoint(store: ObjectStore, key: str) -> Checkpoint:
    return Checkpoint.from_dict(parse_json(store.get(key)))


def list_checkpoints(store: ObjectStore, collection_id: int) -> List[HlcTimestamp]:
    """Checkpoint timestamps of a collection, oldest first."""
    out: List[HlcTimestamp] = []
    for key in store.list(checkpoint_prefix(collection_id)):
        name = key.rsplit("/", 1)[1]
        if name.startswith("checkpoint-") and name.endswith(".json"):
            out.append(HlcTimestamp.decode(int(name[len("checkpoint-"):-len(".json")])))
    return sorted(out)


def latest_at_or_before(store: ObjectStore, collection_id: int, ts: HlcTimestamp) -> Optional[Checkpoint]:
    candidates = [c for c in list_checkpoints(store, collection_id) if c <= ts]
    if not candidates:
        return None
    return load_checkpoint(store, checkpoint_key(collection_id, candidates[-1]))
