"""
Module: data_node.py

Role of this file
-----------------
Data nodes turn the WAL into sealed segments.

A data node watches the WAL channels the data coordinator assigns to it. For
every channel it replays inserts into growing segment buffers, in WAL order,
and seals a buffer when:
- the insert that was just appended reached the size threshold (SIZE),
- a time-tick finds it idle for the inactivity period (INACTIVITY),
- a `seal_segment` entry for it shows up on the channel (MANUAL).

Sealing writes one binlog per field (plus the LSN column) to the object
store and registers the descriptor with the data coordinator.

Deletes that target a sealed segment are gathered in a per-segment delta
log and flushed at the next time-tick. A delete that targets a retired
(merged) segment is redirected to its successor.

After each time-tick the node records in the metastore the WAL offset from
which the channel must be replayed to rebuild everything that is not yet
durable (the oldest growing segment start or the oldest unflushed delete).

Who uses this file
------------------
- cluster.py creates data nodes and pumps them.
- coordinators/data.py assigns channels (watch_channel) and receives sealed
  and merged segments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

from loguru import logger

from logvec.backbone.broker import LogBroker, Subscription
from logvec.config import SegmentSettings
from logvec.coordinators.data import DataCoordinator, replay_key
from logvec.models import rules
from logvec.models.columns import SegmentColumns
from logvec.models.log_entry import EntryKind, LogEntry
from logvec.models.schema import Schema, row_bytes
from logvec.models.segment import SealTrigger, SegmentDescriptor
from logvec.models.timestamps import HlcTimestamp, Tso
from logvec.nodes.segment_buffer import GrowingSegmentBuffer
from logvec.storage.binlog import load_segment_columns, paths_by_field, segment_to_binlogs
from logvec.storage.deltalog import DeltaLog
from logvec.storage.metastore import MetaStore
from logvec.storage.object_store import ObjectStore, segment_key
from logvec.utils.constants import COORD_CHANNEL
from logvec.utils.retry import with_retries


def delta_key(collection_id: int, segment_id: int) -> str:
    return segment_key(collection_id, segment_id, "delta")


@dataclass
class ChannelState:
    subscription: Subscription
    buffers: Dict[int, GrowingSegmentBuffer] = field(default_factory=dict)
    # sealed segment id -> deletes not yet written to its delta log
    dirty: Dict[int, DeltaLog] = field(default_factory=dict)
    first_unflushed: Optional[int] = None
    replay_offset: Optional[int] = None


class DataNode:
    def __init__(
        self,
        node_id: str,
        broker: LogBroker,
        tso: Tso,
        meta: MetaStore,
        store: ObjectStore,
        data_coord: DataCoordinator,
        settings: Optional[SegmentSettings] = None,
    ) -> None:
        self.node_id = node_id
        self.broker = broker
        self.tso = tso
        self.meta = meta
        self.store = store
        self.data_coord = data_coord
        self.settings = settings or SegmentSettings()
        self.channels: Dict[str, ChannelState] = {}
        self._coord = broker.subscribe(COORD_CHANNEL, broker.end_offset(COORD_CHANNEL))

    # ------------------------------------------------------------------
    # Channel assignment
    # ------------------------------------------------------------------

    def watch(self, channel: str) -> None:
        if channel in self.channels:
            return
        start = max(self.data_coord.replay_offset(channel), self.broker.base_offset(channel))
        self.channels[channel] = ChannelState(self.broker.subscribe(channel, start))
        logger.info(f"data node {self.node_id}: watching {channel} from offset {start}")

    def unwatch(self, channel: str) -> None:
        self.channels.pop(channel, None)

    # ------------------------------------------------------------------
    # Pumping
    # ------------------------------------------------------------------

    def pump(self) -> int:
        handled = 0
        for _, entry in self._coord.poll():
            handled += 1
            if entry.payload.get("role") != "data" or entry.payload.get("node") != self.node_id:
                continue
            if entry.message_type == "watch_channel":
                self.watch(str(entry.payload["channel"]))
            elif entry.message_type == "unwatch_channel":
                self.unwatch(str(entry.payload["channel"]))
        for name in list(self.channels):
            state = self.channels.get(name)
            if state is None:
                continue
            for offset, entry in state.subscription.poll():
                handled += 1
                self._apply(name, state, offset, entry)
        return handled

    def _schema(self, collection_id: int) -> Optional[Schema]:
        desc = self.data_coord.collections.get(collection_id)
        return None if desc is None else desc.schema

    def _apply(self, channel: str, state: ChannelState, offset: int, entry: LogEntry) -> None:
        if entry.kind is EntryKind.INSERT:
            self._apply_insert(state, offset, entry)
        elif entry.kind is EntryKind.DELETE:
            self._apply_delete(state, offset, entry)
        elif entry.kind is EntryKind.COORD and entry.message_type == "seal_segment":
            buffer = state.buffers.get(int(entry.payload["segment"]))
            if buffer is not None and buffer.row_count:
                self._seal(state, buffer, SealTrigger.MANUAL, entry.timestamp)
        elif entry.kind is EntryKind.TIME_TICK:
            self._on_tick(channel, state, offset, entry.timestamp)

    def _apply_insert(self, state: ChannelState, offset: int, entry: LogEntry) -> None:
        sid = int(entry.payload["segment"])
        if self.data_coord.is_sealed(sid):
            # already durable, seen again during replay
            return
        buffer = state.buffers.get(sid)
        if buffer is None:
            desc = self.data_coord.get(sid)
            schema = self._schema(int(entry.payload["collection"]))
            if desc is None or schema is None:
                logger.warning(f"data node {self.node_id}: insert for unknown segment {sid} skipped")
                return
            buffer = GrowingSegmentBuffer(desc, schema, self.settings.slice_rows)
            state.buffers[sid] = buffer
        buffer.append(entry.entity(), offset)
        trigger = buffer.seal_trigger_after_insert(self.settings.seal_rows, self.settings.seal_bytes)
        if trigger is not None:
            self._seal(state, buffer, trigger, entry.timestamp)

    def _apply_delete(self, state: ChannelState, offset: int, entry: LogEntry) -> None:
        sid = int(entry.payload["segment"])
        pk = entry.payload["pk"]
        buffer = state.buffers.get(sid)
        if buffer is not None:
            buffer.record_delete(pk, entry.timestamp, offset)
            return
        live = self.data_coord.resolve_live(sid)
        if live is None:
            logger.warning(f"data node {self.node_id}: delete of {pk!r} targets unknown segment {sid}")
            return
        state.dirty.setdefault(live, DeltaLog()).add(pk, entry.timestamp)
        if state.first_unflushed is None:
            state.first_unflushed = offset

    def _on_tick(self, channel: str, state: ChannelState, offset: int, tick: HlcTimestamp) -> None:
        for buffer in list(state.buffers.values()):
            if rules.is_inactive(buffer.last_insert, tick, self.settings.inactivity_ms):
                self._seal(state, buffer, SealTrigger.INACTIVITY, tick)
        self._flush_deltas(state)
        starts = [b.start_offset for b in state.buffers.values() if b.start_offset is not None]
        replay_from = min([*starts, offset + 1])
        if replay_from != state.replay_offset:
            self.meta.put(replay_key(channel), {"offset": replay_from, "tick": tick.encode()})
            state.replay_offset = replay_from

    # ------------------------------------------------------------------
    # Sealing and deltas
    # ------------------------------------------------------------------

    def _write_binlogs(self, schema: Schema, desc: SegmentDescriptor, columns: SegmentColumns) -> None:
        blobs = segment_to_binlogs(schema, desc.collection_id, desc.segment_id, columns)
        for key, data in blobs.items():
            with_retries(lambda k=key, d=data: self.store.put(k, d), what=f"binlog {key}")
        desc.binlog_paths = paths_by_field(blobs)

    def _write_delta(self, desc: SegmentDescriptor, log: DeltaLog) -> None:
        key = delta_key(desc.collection_id, desc.segment_id)
        merged = DeltaLog.from_bytes(self.store.get(key)) if self.store.exists(key) else DeltaLog()
        merged.merge(log)
        payload = merged.to_bytes()
        with_retries(lambda: self.store.put(key, payload), what=f"delta log {key}")
        desc.delta_path = key

    def _seal(self, state: ChannelState, buffer: GrowingSegmentBuffer, trigger: SealTrigger, ts: HlcTimestamp) -> None:
        desc = buffer.descriptor
        self._write_binlogs(buffer.schema, desc, buffer.columns())
        if buffer.pending_deletes:
            self._write_delta(desc, DeltaLog.from_entries((pk, t) for pk, t, _ in buffer.pending_deletes))
        desc.seal(trigger, ts)
        state.buffers.pop(desc.segment_id, None)
        self.data_coord.segment_sealed(desc)

    def _flush_deltas(self, state: ChannelState) -> int:
        flushed = 0
        for sid, log in list(state.dirty.items()):
            desc = self.data_coord.get(sid)
            if desc is None:
                continue
            self._write_delta(desc, log)
            self.data_coord.set_delta_path(sid, desc.delta_path or "")
            flushed += len(log)
        state.dirty.clear()
        state.first_unflushed = None
        return flushed

    def flush(self) -> int:
        """Write every pending delete to the delta logs."""
        return sum(self._flush_deltas(state) for state in self.channels.values())

    # ------------------------------------------------------------------
    # Merging
    # ------------------------------------------------------------------

    def merge_segments(self, descs: List[SegmentDescriptor]) -> SegmentDescriptor:
        """
        Merge sealed segments of one shard into a new sealed segment. Rows
        deleted in the parents' delta logs are dropped.
        """
        if len(descs) < 2:
            raise ValueError("merging needs at least two segments")
        first = descs[0]
        if any(d.collection_id != first.collection_id or d.shard_id != first.shard_id for d in descs):
            raise ValueError("merged segments must belong to the same shard")
        if any(not d.is_sealed or not d.is_live for d in descs):
            raise ValueError("only live sealed segments can be merged")
        schema = self._schema(first.collection_id)
        if schema is None:
            raise ValueError(f"collection {first.collection_id} is unknown")

        self.flush()
        parts: List[SegmentColumns] = []
        for d in descs:
            d = self.data_coord.require(d.segment_id)
            columns = load_segment_columns(self.store, schema, d.binlog_paths)
            delta = DeltaLog.from_bytes(self.store.get(d.delta_path)) if d.delta_path else DeltaLog()
            keep = [i for i in range(len(columns)) if not delta.deleted_after(columns.pks[i], columns.lsn(i))]
            parts.append(columns.take(keep))
        merged = SegmentColumns.concat(schema, parts)

        new = self.data_coord.allocate_segment(
            first.collection_id, first.shard_id, first.channel, min(d.start_offset for d in descs)
        )
        new.parents = [d.segment_id for d in descs]
        new.progress = max(d.progress for d in descs)
        new.record_rows(len(merged), sum(row_bytes(schema, e) for e in merged.entities()))
        self._write_binlogs(schema, new, merged)
        new.seal(SealTrigger.MERGE, self.tso.allocate())
        self.data_coord.segments_merged(new, new.parents, list(merged.pks))
        logger.info(
            f"data node {self.node_id}: merged segments {new.parents} into {new.segment_id} ({len(merged)} rows)"
        )
        return new

    def growing_rows(self) -> int:
        return sum(b.row_count for s in self.channels.values() for b in s.buffers.values())
