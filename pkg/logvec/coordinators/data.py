"""
Module: data.py

Role of this file
-----------------
Data coordinator: the segment catalogue of every collection.

- allocates segment ids for loggers (growing descriptors),
- registers sealed segments reported by data nodes and announces them on
  the coord channel (segment_sealed), which triggers index building and
  query-node loading,
- retires merged segments and points them at their successor,
- assigns WAL channels to data nodes (watch_channel),
- writes the periodic segment-map checkpoints used by time travel.

Metastore keys
--------------
    segment/{sid}           SegmentDescriptor.to_dict()
    replay/{channel}        {"offset": n, "tick": ts}, written by data nodes

The descriptors are cached in memory; every write goes to the metastore
first.
"""

from __future__ import annotations

from typing import Dict, List, Optional

from loguru import logger

from logvec.backbone.broker import LogBroker
from logvec.coordinators.root import list_collection_descriptors
from logvec.models import rules
from logvec.models.collection import CollectionDescriptor
from logvec.models.errors import UnknownSegmentError
from logvec.models.log_entry import EntryKind, LogEntry
from logvec.models.schema import PrimaryKey
from logvec.models.segment import SegmentDescriptor
from logvec.models.timestamps import HlcTimestamp, Tso
from logvec.storage.checkpoint import Checkpoint, write_checkpoint
from logvec.storage.metastore import MetaStore
from logvec.storage.object_store import ObjectStore
from logvec.utils.constants import COORD_CHANNEL, DDL_CHANNEL


def segment_meta_key(segment_id: int) -> str:
    return f"segment/{segment_id}"


def replay_key(channel: str) -> str:
    return f"replay/{channel}"


class DataCoordinator:
    def __init__(self, meta: MetaStore, broker: LogBroker, tso: Tso, store: ObjectStore) -> None:
        self.meta = meta
        self.broker = broker
        self.tso = tso
        self.store = store
        self.collections: Dict[int, CollectionDescriptor] = {
            d.collection_id: d for d in list_collection_descriptors(meta)
        }
        self._segments: Dict[int, SegmentDescriptor] = {
            int(k.split("/", 1)[1]): SegmentDescriptor.from_dict(v) for k, v in meta.list("segment/").items()
        }
        self.data_nodes: List[str] = []
        # channel -> data node id
        self.channel_owner: Dict[str, str] = {}
        self._ddl = broker.subscribe(DDL_CHANNEL, broker.end_offset(DDL_CHANNEL))

    # ------------------------------------------------------------------
    # Segment catalogue
    # ------------------------------------------------------------------

    def _save(self, desc: SegmentDescriptor) -> None:
        self.meta.put(segment_meta_key(desc.segment_id), desc.to_dict())
        self._segments[desc.segment_id] = desc.copy()

    def get(self, segment_id: int) -> Optional[SegmentDescriptor]:
        desc = self._segments.get(segment_id)
        return None if desc is None else desc.copy()

    def require(self, segment_id: int) -> SegmentDescriptor:
        desc = self.get(segment_id)
        if desc is None:
            raise UnknownSegmentError(segment_id)
        return desc

    def segments(self, collection_id: int) -> List[SegmentDescriptor]:
        return [d.copy() for sid, d in sorted(self._segments.items()) if d.collection_id == collection_id]

    def live_sealed(self, collection_id: int) -> List[SegmentDescriptor]:
        return [d for d in self.segments(collection_id) if d.is_sealed and d.is_live]

    def is_sealed(self, segment_id: int) -> bool:
        desc = self._segments.get(segment_id)
        return desc is not None and desc.is_sealed

    def allocate_segment(self, collection_id: int, shard_id: int, channel: str, start_offset: int) -> SegmentDescriptor:
        sid = self.meta.next_id("segment")
        desc = SegmentDescriptor(sid, collection_id, shard_id, channel, start_offset=start_offset)
        self._save(desc)
        logger.debug(f"segment {sid} allocated on {channel} at offset {start_offset}")
        return desc

    def segment_sealed(self, desc: SegmentDescriptor) -> None:
        """Register a sealed segment (binlogs written) and announce it."""
        self._save(desc)
        self.broker.publish_stamped(
            COORD_CHANNEL,
            self.tso,
            lambda ts: LogEntry.coord(ts, "segment_sealed", collection=desc.collection_id, segment=desc.to_dict()),
        )
        logger.info(
            f"segment {desc.segment_id} sealed ({desc.seal_trigger.value if desc.seal_trigger else '?'}, "
            f"{desc.row_count} rows)"
        )

    def segments_merged(self, new: SegmentDescriptor, old_ids: List[int], pks: List[PrimaryKey]) -> None:
        retired_ts = self.tso.allocate()
        for sid in old_ids:
            old = self.require(sid)
            old.retired_ts = retired_ts
            old.successor = new.segment_id
            self._save(old)
        self.segment_sealed(new)
        self.broker.publish_stamped(
            COORD_CHANNEL,
            self.tso,
            lambda ts: LogEntry.coord(
                ts,
                "segments_merged",
                collection=new.collection_id,
                shard=new.shard_id,
                new=new.segment_id,
                old=list(old_ids),
                pks=list(pks),
            ),
        )

    def resolve_live(self, segment_id: int) -> Optional[int]:
        """Follow successors from `segment_id` to the live segment holding its rows."""
        seen = set()
        desc = self._segments.get(segment_id)
        while desc is not None and not desc.is_live:
            if desc.segment_id in seen or desc.successor is None:
                return None
            seen.add(desc.segment_id)
            desc = self._segments.get(int(desc.successor))
        return None if desc is None else desc.segment_id

    def add_index_path(self, segment_id: int, field_name: str, path: str) -> None:
        desc = self.require(segment_id)
        desc.index_paths[field_name] = path
        self._save(desc)

    def set_delta_path(self, segment_id: int, path: str) -> None:
        desc = self.require(segment_id)
        desc.delta_path = path
        self._save(desc)

    def forget_segment(self, segment_id: int) -> None:
        self.meta.delete(segment_meta_key(segment_id))
        self._segments.pop(segment_id, None)

    # ------------------------------------------------------------------
    # Channels and data nodes
    # ------------------------------------------------------------------

    def replay_offset(self, channel: str) -> int:
        record = self.meta.get(replay_key(channel))
        if record is None:
            return self.broker.base_offset(channel) if self.broker.has_channel(channel) else 0
        return int(record["offset"])

    def set_data_nodes(self, node_ids: List[str]) -> None:
        self.data_nodes = sorted(node_ids)
        self._assign_channels()

    def _assign_channels(self) -> None:
        if not self.data_nodes:
            return
        # channels keep their node while it is registered; orphans go to the least busy node
        for channel, owner in list(self.channel_owner.items()):
            if owner not in self.data_nodes:
                del self.channel_owner[channel]
        channels = [ch for cid in sorted(self.collections) for ch in self.collections[cid].channels]
        for channel in channels:
            if channel in self.channel_owner:
                continue
            load = {n: 0 for n in self.data_nodes}
            for n in self.channel_owner.values():
                load[n] += 1
            owner = min(self.data_nodes, key=lambda n: (load[n], n))
            self.channel_owner[channel] = owner
            self._publish("watch_channel", role="data", channel=channel, node=owner)

    def _publish(self, message: str, **fields) -> None:
        self.broker.publish_stamped(COORD_CHANNEL, self.tso, lambda ts: LogEntry.coord(ts, message, **fields))

    def pump(self) -> int:
        batch = self._ddl.poll()
        for _, entry in batch:
            if entry.kind is not EntryKind.DDL:
                continue
            if entry.message_type == "create_collection":
                desc = CollectionDescriptor.from_dict(entry.payload["collection"])
                self.collections[desc.collection_id] = desc
                self._assign_channels()
            elif entry.message_type == "drop_collection":
                desc = self.collections.pop(int(entry.payload["collection_id"]), None)
                if desc is not None:
                    for channel in desc.channels:
                        owner = self.channel_owner.pop(channel, None)
                        if owner is not None:
                            self._publish("unwatch_channel", role="data", channel=channel, node=owner)
            elif entry.message_type == "create_index":
                cid = int(entry.payload["collection_id"])
                if cid in self.collections:
                    self.collections[cid].index_params = entry.payload["params"]
        return len(batch)

    # ------------------------------------------------------------------
    # Policies
    # ------------------------------------------------------------------

    def plan_merges(
        self,
        collection_id: int,
        seal_rows: int = rules.SEAL_ROWS,
        min_segments: int = rules.MERGE_MIN_SEGMENTS,
        small_fraction: float = rules.MERGE_SMALL_FRACTION,
    ) -> Dict[int, List[SegmentDescriptor]]:
        return rules.select_merge_candidates(self.live_sealed(collection_id), seal_rows, min_segments, small_fraction)

    def write_checkpoint(self, collection_id: int, ts: Optional[HlcTimestamp] = None) -> str:
        desc = self.collections.get(collection_id)
        if desc is None:
            raise UnknownSegmentError(f"collection {collection_id}")
        checkpoint_ts = self.tso.allocate() if ts is None else ts
        watermarks: Dict[str, int] = {}
        for channel in desc.channels:
            record = self.meta.get(replay_key(channel)) or {}
            if record.get("tick") is not None:
                watermarks[channel] = int(record["tick"])
        checkpoint = Checkpoint(
            collection_id=collection_id,
            checkpoint_ts=checkpoint_ts,
            segments=self.live_sealed(collection_id),
            replay_from={ch: self.replay_offset(ch) for ch in desc.channels},
            watermarks=watermarks,
        )
        return write_checkpoint(self.store, checkpoint)
