"""
Module: wal_logger.py

Role of this file
-----------------
Loggers: the entry point of every insert and delete.

A logger owns a set of shards (decided by the hash ring). For each owned
shard it checks the request, takes an LSN from the TSO, picks the growing
segment the entity goes to, writes the entry to the shard's WAL channel and
records pk -> segment in the shard's EntitySegmentMap.

Segment choice follows the same deterministic rules as the data node that
consumes the channel, so both sides agree on segment boundaries without
talking to each other:
- a segment is closed after the insert that makes it reach the row or byte
  threshold;
- a segment is closed at the first time-tick that finds it idle for the
  inactivity period (the logger sees the tick in a hook that runs under the
  channel's writer lock, right before the tick is appended);
- a manual seal is a `seal_segment` entry on the WAL channel itself.

Auto-assigned primary keys are the insert's encoded LSN. They are not hash
routed (the shard is picked round robin before the key exists), so deletes
of auto keys probe every shard's map.

Who uses this file
------------------
- cluster.py forwards insert/delete/seal requests to the LoggerGroup.
- backbone/time_tick.py calls the tick hooks registered here.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

from loguru import logger

from logvec.backbone.broker import LogBroker
from logvec.backbone.time_tick import TimeTickEmitter
from logvec.config import SegmentSettings
from logvec.coordinators.data import DataCoordinator
from logvec.models import rules
from logvec.models.collection import CollectionDescriptor
from logvec.models.errors import (
    DuplicatePrimaryKeyError,
    NotOwnerError,
    SchemaViolationError,
    UnknownPrimaryKeyError,
)
from logvec.models.log_entry import EntryKind, LogEntry
from logvec.models.schema import Entity, PrimaryKey, row_bytes, validate_entity
from logvec.models.segment import SegmentDescriptor
from logvec.models.timestamps import HlcTimestamp, Tso
from logvec.nodes.entity_map import EntitySegmentMap
from logvec.nodes.hash_ring import HashRing, shard_of
from logvec.storage.object_store import ObjectStore
from logvec.utils.constants import COORD_CHANNEL, DDL_CHANNEL

ShardKey = Tuple[int, int]


@dataclass
class ShardWriter:
    collection: CollectionDescriptor
    shard_id: int
    entity_map: EntitySegmentMap
    current: Optional[SegmentDescriptor] = None
    rows: int = 0
    nbytes: int = 0
    last_insert: Optional[HlcTimestamp] = None

    @property
    def channel(self) -> str:
        return self.collection.channel_for(self.shard_id)

    def close_segment(self) -> Optional[int]:
        sid = None if self.current is None else self.current.segment_id
        self.current = None
        self.rows = 0
        self.nbytes = 0
        return sid


# ---------------------------------------------------------------------------
# One logger
# ---------------------------------------------------------------------------

class LoggerNode:
    def __init__(
        self,
        logger_id: str,
        broker: LogBroker,
        tso: Tso,
        store: ObjectStore,
        data_coord: DataCoordinator,
        settings: Optional[SegmentSettings] = None,
    ) -> None:
        self.logger_id = logger_id
        self.broker = broker
        self.tso = tso
        self.store = store
        self.data_coord = data_coord
        self.settings = settings or SegmentSettings()
        self.shards: Dict[ShardKey, ShardWriter] = {}

    def owns(self, collection_id: int, shard_id: int) -> bool:
        return (collection_id, shard_id) in self.shards

    def _writer(self, collection_id: int, shard_id: int) -> ShardWriter:
        writer = self.shards.get((collection_id, shard_id))
        if writer is None:
            raise NotOwnerError(f"logger {self.logger_id} does not own shard {collection_id}/{shard_id}")
        return writer

    # ------------------------------------------------------------------
    # Shard ownership
    # ------------------------------------------------------------------

    def take_shard(self, collection: CollectionDescriptor, shard_id: int) -> ShardWriter:
        """Rebuild the shard's map from its sorted runs plus the WAL tail."""
        key = (collection.collection_id, shard_id)
        if key in self.shards:
            return self.shards[key]
        entity_map = EntitySegmentMap.load(self.store, collection.collection_id, shard_id)
        channel = collection.channel_for(shard_id)
        start = max(entity_map.wal_offset, self.broker.base_offset(channel))
        replayed = 0
        for _, entry in self.broker.read(channel, start):
            if entry.kind is EntryKind.INSERT:
                entity_map.put(entry.payload["entity"]["pk"], int(entry.payload["segment"]))
                replayed += 1
            elif entry.kind is EntryKind.DELETE:
                entity_map.remove(entry.payload["pk"])
                replayed += 1
        writer = ShardWriter(collection, shard_id, entity_map)
        self.shards[key] = writer
        logger.info(f"logger {self.logger_id}: took shard {collection.collection_id}/{shard_id} ({replayed} entries replayed)")
        return writer

    def drop_shard(self, collection_id: int, shard_id: int) -> None:
        self.shards.pop((collection_id, shard_id), None)

    # ------------------------------------------------------------------
    # Requests
    # ------------------------------------------------------------------

    def handle_insert(self, collection: CollectionDescriptor, shard_id: int, entity: Entity) -> Entity:
        """Log one entity. Returns the logged copy (LSN and primary key set)."""
        result = validate_entity(collection.schema, entity)
        if not result.ok:
            raise SchemaViolationError(result.violations)
        writer = self._writer(collection.collection_id, shard_id)
        channel = writer.channel
        with self.broker.writer_lock(channel):
            ts = self.tso.allocate()
            pk = ts.encode() if result.auto_pk else entity.pk
            if writer.entity_map.lookup(pk) is not None:
                raise DuplicatePrimaryKeyError(f"primary key {pk!r} already exists")
            logged = entity.with_lsn(ts, pk)
            if writer.current is None:
                writer.current = self.data_coord.allocate_segment(
                    collection.collection_id, shard_id, channel, self.broker.end_offset(channel)
                )
            sid = writer.current.segment_id
            self.broker.publish(channel, LogEntry.insert(ts, collection.collection_id, sid, logged))
            writer.entity_map.put(pk, sid)
            writer.rows += 1
            writer.nbytes += row_bytes(collection.schema, logged)
            writer.last_insert = ts
            if rules.size_seal_trigger(writer.rows, writer.nbytes, self.settings.seal_rows, self.settings.seal_bytes):
                writer.close_segment()
        return logged

    def handle_delete(self, collection: CollectionDescriptor, shard_id: int, pk: PrimaryKey) -> HlcTimestamp:
        writer = self._writer(collection.collection_id, shard_id)
        with self.broker.writer_lock(writer.channel):
            sid = writer.entity_map.lookup(pk)
            if sid is None:
                raise UnknownPrimaryKeyError(pk)
            ts = self.tso.allocate()
            self.broker.publish(writer.channel, LogEntry.delete(ts, collection.collection_id, sid, pk))
            writer.entity_map.remove(pk)
        return ts

    def seal_shard(self, collection_id: int, shard_id: int) -> List[int]:
        """Close every growing segment of the shard with a seal_segment entry."""
        writer = self._writer(collection_id, shard_id)
        growing = [
            d.segment_id
            for d in self.data_coord.segments(collection_id)
            if not d.is_sealed and d.channel == writer.channel
        ]
        if not growing:
            writer.close_segment()
            return []
        with self.broker.writer_lock(writer.channel):
            for sid in growing:
                ts = self.tso.allocate()
                self.broker.publish(writer.channel, LogEntry.coord(ts, "seal_segment", segment=sid))
            writer.close_segment()
        return growing

    def on_tick(self, collection_id: int, shard_id: int, ts: HlcTimestamp) -> None:
        writer = self.shards.get((collection_id, shard_id))
        if writer is None or writer.current is None:
            return
        if rules.is_inactive(writer.last_insert, ts, self.settings.inactivity_ms):
            sid = writer.close_segment()
            logger.debug(f"logger {self.logger_id}: segment {sid} idle at tick {ts}")

    def apply_merge(self, collection_id: int, shard_id: int, new: int, old: List[int], pks: List[PrimaryKey]) -> int:
        writer = self.shards.get((collection_id, shard_id))
        if writer is None:
            return 0
        return writer.entity_map.remap(pks, old, new)

    def flush_maps(self) -> int:
        flushed = 0
        for writer in self.shards.values():
            with self.broker.writer_lock(writer.channel):
                if writer.entity_map.flush(self.broker.end_offset(writer.channel)) is not None:
                    flushed += 1
        return flushed


# ---------------------------------------------------------------------------
# The group of loggers behind the hash ring
# ---------------------------------------------------------------------------

class LoggerGroup:
    def __init__(
        self,
        broker: LogBroker,
        tso: Tso,
        store: ObjectStore,
        data_coord: DataCoordinator,
        ticks: TimeTickEmitter,
        settings: Optional[SegmentSettings] = None,
        ring_buckets: int = 64,
        ring_vnodes: int = 16,
    ) -> None:
        self.broker = broker
        self.tso = tso
        self.store = store
        self.data_coord = data_coord
        self.ticks = ticks
        self.settings = settings or SegmentSettings()
        self.ring = HashRing(ring_buckets, ring_vnodes)
        self.loggers: Dict[str, LoggerNode] = {}
        self.collections: Dict[int, CollectionDescriptor] = {}
        self._round_robin: Dict[int, itertools.count] = {}
        self._ddl = broker.subscribe(DDL_CHANNEL, broker.end_offset(DDL_CHANNEL))
        self._coord = broker.subscribe(COORD_CHANNEL, broker.end_offset(COORD_CHANNEL))

    # ------------------------------------------------------------------
    # Membership
    # ------------------------------------------------------------------

    def add_logger(self, logger_id: str) -> LoggerNode:
        node = LoggerNode(logger_id, self.broker, self.tso, self.store, self.data_coord, self.settings)
        self.loggers[logger_id] = node
        self.ring.add_logger(logger_id)
        self._place_shards()
        return node

    def remove_logger(self, logger_id: str) -> None:
        """Take a logger out of the ring; its unflushed map state is rebuilt by the new owners."""
        self.loggers.pop(logger_id, None)
        self.ring.remove_logger(logger_id)
        self._place_shards()
        logger.info(f"logger {logger_id} removed, {len(self.loggers)} left")

    def _place_shards(self) -> None:
        if not self.loggers:
            return
        for desc in self.collections.values():
            for shard in range(desc.shard_count):
                owner = self.ring.owner_of_shard(desc.collection_id, shard)
                for node in self.loggers.values():
                    if node.logger_id != owner:
                        node.drop_shard(desc.collection_id, shard)
                self.loggers[owner].take_shard(desc, shard)

    def adopt_collection(self, desc: CollectionDescriptor) -> None:
        self.collections[desc.collection_id] = desc
        for shard in range(desc.shard_count):
            self.ticks.register(desc.channel_for(shard), self._tick_hook(desc.collection_id, shard))
        self._place_shards()

    def _forget_collection(self, collection_id: int) -> None:
        desc = self.collections.pop(collection_id, None)
        if desc is None:
            return
        for shard in range(desc.shard_count):
            self.ticks.unregister(desc.channel_for(shard))
            for node in self.loggers.values():
                node.drop_shard(collection_id, shard)

    def _tick_hook(self, collection_id: int, shard_id: int):
        def hook(ts: HlcTimestamp) -> None:
            node = self._owner(collection_id, shard_id)
            if node is not None:
                node.on_tick(collection_id, shard_id, ts)

        return hook

    def _owner(self, collection_id: int, shard_id: int) -> Optional[LoggerNode]:
        if not self.loggers:
            return None
        return self.loggers.get(self.ring.owner_of_shard(collection_id, shard_id))

    def owner_of(self, collection_id: int, shard_id: int) -> LoggerNode:
        node = self._owner(collection_id, shard_id)
        if node is None:
            raise NotOwnerError(f"no logger owns shard {collection_id}/{shard_id}")
        return node

    # ------------------------------------------------------------------
    # Log consumption
    # ------------------------------------------------------------------

    def pump(self) -> int:
        handled = 0
        for _, entry in self._ddl.poll():
            handled += 1
            if entry.message_type == "create_collection":
                self.adopt_collection(CollectionDescriptor.from_dict(entry.payload["collection"]))
            elif entry.message_type == "drop_collection":
                self._forget_collection(int(entry.payload["collection_id"]))
        for _, entry in self._coord.poll():
            handled += 1
            if entry.message_type != "segments_merged":
                continue
            cid, shard = int(entry.payload["collection"]), int(entry.payload["shard"])
            node = self._owner(cid, shard) if cid in self.collections else None
            if node is not None:
                node.apply_merge(cid, shard, int(entry.payload["new"]), list(entry.payload["old"]), list(entry.payload["pks"]))
        return handled

    # ------------------------------------------------------------------
    # Requests
    # ------------------------------------------------------------------

    def _shard_for_insert(self, desc: CollectionDescriptor, entity: Entity) -> int:
        if desc.schema.auto_id:
            counter = self._round_robin.setdefault(desc.collection_id, itertools.count())
            return next(counter) % desc.shard_count
        if entity.pk is None:
            # validation reports the missing key
            return 0
        return shard_of(entity.pk, desc.shard_count)

    def insert(self, desc: CollectionDescriptor, entities: Iterable[Entity]) -> List[Entity]:
        logged: List[Entity] = []
        for entity in entities:
            shard = self._shard_for_insert(desc, entity)
            logged.append(self.owner_of(desc.collection_id, shard).handle_insert(desc, shard, entity))
        return logged

    def delete(self, desc: CollectionDescriptor, pks: Iterable[PrimaryKey]) -> List[HlcTimestamp]:
        stamps: List[HlcTimestamp] = []
        for pk in pks:
            if desc.schema.auto_id:
                stamps.append(self._delete_probing(desc, pk))
            else:
                shard = shard_of(pk, desc.shard_count)
                stamps.append(self.owner_of(desc.collection_id, shard).handle_delete(desc, shard, pk))
        return stamps

    def _delete_probing(self, desc: CollectionDescriptor, pk: PrimaryKey) -> HlcTimestamp:
        for shard in range(desc.shard_count):
            node = self.owner_of(desc.collection_id, shard)
            if node.shards[(desc.collection_id, shard)].entity_map.lookup(pk) is not None:
                return node.handle_delete(desc, shard, pk)
        raise UnknownPrimaryKeyError(pk)

    def seal(self, desc: CollectionDescriptor) -> List[int]:
        sealed: List[int] = []
        for shard in range(desc.shard_count):
            sealed.extend(self.owner_of(desc.collection_id, shard).seal_shard(desc.collection_id, shard))
        return sealed

    def flush_maps(self) -> int:
        return sum(node.flush_maps() for node in self.loggers.values())
