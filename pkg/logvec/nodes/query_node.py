"""
Module: query_node.py

Role of this file
-----------------
Query nodes hold data in memory and answer searches over it.

A query node serves, per collection:
- sealed segments the query coordinator told it to load (binlogs, delta log
  and built indexes read from the object store);
- growing segments of the WAL channels it owns, rebuilt from the WAL with a
  temporary index per full slice.

It subscribes to every WAL channel of a served collection: deletes are
applied to every loaded copy of the affected rows, and the last time-tick of
each channel tells how far the node has consumed the log. A search waits
(returns None) while the delta-consistency guard does not allow it.

Commands arrive on the coord channel: watch_channel, load_segment,
release_segment, release_growing, load_index, release_collection.

Who uses this file
------------------
- nodes/proxy.py calls search_local / query_local.
- cluster.py creates nodes, pumps them and writes their heartbeats.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

import numpy as np
from loguru import logger

from logvec.algorithms.bitmap import DeleteBitmap, should_rebuild
from logvec.algorithms.filtering import FilterExpr, compile_filter
from logvec.algorithms.index_io import index_from_bytes
from logvec.algorithms.segment_index import IndexParams, SegmentIndex
from logvec.algorithms.segment_search import segment_search
from logvec.algorithms.topk import merge_hits
from logvec.backbone.broker import LogBroker, Subscription
from logvec.config import IndexSettings, SegmentSettings
from logvec.coordinators.data import replay_key
from logvec.coordinators.query import heartbeat_key
from logvec.coordinators.root import read_collection
from logvec.models import rules
from logvec.models.collection import CollectionDescriptor
from logvec.models.columns import SegmentColumns
from logvec.models.errors import LogvecError
from logvec.models.log_entry import EntryKind, LogEntry
from logvec.models.schema import PrimaryKey
from logvec.models.search import Hit, PartialResult, SearchRequest
from logvec.models.segment import SegmentDescriptor
from logvec.models.timestamps import HlcTimestamp, Tso
from logvec.nodes.segment_buffer import GrowingSegmentBuffer
from logvec.storage.binlog import load_segment_columns
from logvec.storage.deltalog import DeltaLog
from logvec.storage.metastore import MetaStore
from logvec.storage.object_store import ObjectStore, segment_key
from logvec.utils.clock import Clock
from logvec.utils.constants import COORD_CHANNEL
from logvec.utils.vector_math import Metric


def estimated_rows_scanned(index: Optional[SegmentIndex], rows: int, k: int) -> int:
    """Rows a search touches: all of them for exact search, the probed share otherwise."""
    if index is None or index.kind == "flat":
        return rows
    if index.kind == "ivf_flat":
        nlist = max(1, index.index.nlist)
        return min(rows, int(np.ceil(rows * index.params.nprobe / nlist)))
    return min(rows, index.params.ef_for(k) * index.params.m)


@dataclass
class LoadedSegment:
    descriptor: SegmentDescriptor
    columns: SegmentColumns
    bitmap: DeleteBitmap
    pk_rows: Dict[PrimaryKey, List[int]]
    indexes: Dict[str, SegmentIndex] = field(default_factory=dict)

    @property
    def segment_id(self) -> int:
        return self.descriptor.segment_id

    def apply_delete(self, pk: PrimaryKey, ts: HlcTimestamp) -> int:
        hit = 0
        for row in self.pk_rows.get(pk, []):
            if self.columns.lsn(row) < ts and self.bitmap.set(row):
                hit += 1
        return hit

    def compact(self) -> None:
        """Drop deleted rows and rebuild the indexes over the remaining ones."""
        live = self.bitmap.live_rows(len(self.columns))
        self.columns = self.columns.take(live)
        self.bitmap = DeleteBitmap(self.segment_id, len(self.columns))
        self.pk_rows = _pk_rows(self.columns)
        self.indexes = {
            name: SegmentIndex.build(index.params, self.columns.vectors[name]) for name, index in self.indexes.items()
        }


def _pk_rows(columns: SegmentColumns) -> Dict[PrimaryKey, List[int]]:
    rows: Dict[PrimaryKey, List[int]] = {}
    for i, pk in enumerate(columns.pks):
        rows.setdefault(pk, []).append(i)
    return rows


@dataclass
class ServedCollection:
    descriptor: CollectionDescriptor
    sealed: Dict[int, LoadedSegment] = field(default_factory=dict)
    growing: Dict[int, GrowingSegmentBuffer] = field(default_factory=dict)
    owned: Set[str] = field(default_factory=set)
    subscriptions: Dict[str, Subscription] = field(default_factory=dict)
    # channel -> (offset, pk, ts) of WAL deletes not yet durable in a delta log;
    # replayed onto segments loaded later
    deletes: Dict[str, List[Tuple[int, PrimaryKey, HlcTimestamp]]] = field(default_factory=dict)
    released: Set[int] = field(default_factory=set)
    skip: Set[int] = field(default_factory=set)

    @property
    def collection_id(self) -> int:
        return self.descriptor.collection_id

    def retained_deletes(self) -> int:
        return sum(len(v) for v in self.deletes.values())

    def prune_deletes(self, channel: str, durable_offset: int) -> int:
        """Forget deletes below `durable_offset`: a data node has persisted them."""
        kept = [d for d in self.deletes.get(channel, []) if d[0] >= durable_offset]
        dropped = len(self.deletes.get(channel, [])) - len(kept)
        if kept:
            self.deletes[channel] = kept
        else:
            self.deletes.pop(channel, None)
        return dropped


class QueryNode:
    def __init__(
        self,
        node_id: str,
        broker: LogBroker,
        tso: Tso,
        meta: MetaStore,
        store: ObjectStore,
        clock: Clock,
        index_settings: Optional[IndexSettings] = None,
        segment_settings: Optional[SegmentSettings] = None,
        heartbeat_interval_ms: int = rules.HEARTBEAT_INTERVAL_MS,
    ) -> None:
        self.node_id = node_id
        self.broker = broker
        self.tso = tso
        self.meta = meta
        self.store = store
        self.clock = clock
        self.index_settings = index_settings or IndexSettings()
        self.segment_settings = segment_settings or SegmentSettings()
        self.heartbeat_interval_ms = heartbeat_interval_ms
        self.collections: Dict[int, ServedCollection] = {}
        self.alive = True
        self._last_heartbeat: Optional[int] = None
        self._coord = broker.subscribe(COORD_CHANNEL, broker.end_offset(COORD_CHANNEL))

    # ------------------------------------------------------------------
    # Bookkeeping
    # ------------------------------------------------------------------

    def _served(self, collection_id: int) -> Optional[ServedCollection]:
        served = self.collections.get(collection_id)
        if served is None:
            desc = read_collection(self.meta, collection_id)
            if desc is None:
                return None
            served = ServedCollection(desc)
            self.collections[collection_id] = served
        return served

    def hosted_rows(self) -> int:
        return sum(len(s.columns) for c in self.collections.values() for s in c.sealed.values())

    def heartbeat(self, force: bool = False) -> bool:
        now = self.clock.now_ms()
        if not force and self._last_heartbeat is not None and now - self._last_heartbeat < self.heartbeat_interval_ms:
            return False
        self.meta.put(heartbeat_key(self.node_id), {"ms": now})
        self._last_heartbeat = now
        return True

    # ------------------------------------------------------------------
    # Pumping
    # ------------------------------------------------------------------

    def pump(self) -> int:
        if not self.alive:
            return 0
        handled = 0
        for _, entry in self._coord.poll():
            handled += 1
            self._on_command(entry)
        for served in list(self.collections.values()):
            for channel, sub in list(served.subscriptions.items()):
                for offset, entry in sub.poll():
                    handled += 1
                    self._apply_wal(served, channel, offset, entry)
            self._prune_deletes(served)
        self.heartbeat()
        return handled

    def _on_command(self, entry: LogEntry) -> None:
        if entry.kind is not EntryKind.COORD:
            return
        p = entry.payload
        message = entry.message_type
        if message == "release_growing":
            served = self.collections.get(int(p["collection"]))
            if served is not None:
                served.growing.pop(int(p["segment"]), None)
                served.released.add(int(p["segment"]))
            return
        if message == "release_collection" and "node" not in p:
            self.collections.pop(int(p["collection"]), None)
            return
        if p.get("node") != self.node_id:
            return
        if message == "watch_channel" and p.get("role") == "query":
            self._watch(p)
        elif message == "load_segment":
            self._load_segment(int(p["collection"]), SegmentDescriptor.from_dict(p["segment"]), p.get("migrate_from"))
        elif message == "release_segment":
            served = self.collections.get(int(p["collection"]))
            if served is not None:
                served.sealed.pop(int(p["segment"]), None)
        elif message == "load_index":
            self._load_index(int(p["collection"]), int(p["segment"]), str(p["field"]), str(p["path"]))

    def _watch(self, p: Dict) -> None:
        served = self._served(int(p["collection"]))
        if served is None:
            return
        channel = str(p["channel"])
        from_offset = max(int(p.get("from_offset", 0)), self.broker.base_offset(channel))
        served.skip.update(int(s) for s in p.get("skip", []))
        if p.get("owner") == self.node_id:
            if channel in served.owned:
                return
            current = served.subscriptions.get(channel)
            start = from_offset if current is None else min(current.position.next_offset, from_offset)
            self._drop_growing(served, channel)
            served.subscriptions[channel] = self.broker.subscribe(channel, start)
            served.owned.add(channel)
            logger.info(f"query node {self.node_id}: owns {channel}, replaying from offset {start}")
            return
        if channel in served.owned:
            served.owned.discard(channel)
            self._drop_growing(served, channel)
        if channel not in served.subscriptions:
            served.subscriptions[channel] = self.broker.subscribe(channel, from_offset)

    @staticmethod
    def _drop_growing(served: ServedCollection, channel: str) -> None:
        for sid in [sid for sid, b in served.growing.items() if b.descriptor.channel == channel]:
            del served.growing[sid]

    # ------------------------------------------------------------------
    # Segment loading
    # ------------------------------------------------------------------

    def _publish(self, message: str, **fields) -> None:
        self.broker.publish_stamped(COORD_CHANNEL, self.tso, lambda ts: LogEntry.coord(ts, message, **fields))

    def _maybe_compact(self, seg: LoadedSegment) -> None:
        if should_rebuild(seg.bitmap, len(seg.columns), self.index_settings.rebuild_threshold):
            before = len(seg.columns)
            seg.compact()
            logger.info(f"query node {self.node_id}: segment {seg.segment_id} rebuilt, {before} -> {len(seg.columns)} rows")

    def _load_segment(self, collection_id: int, desc: SegmentDescriptor, migrate_from: Optional[str]) -> None:
        served = self._served(collection_id)
        if served is None:
            return
        schema = served.descriptor.schema
        try:
            columns = load_segment_columns(self.store, schema, desc.binlog_paths)
            delta = DeltaLog()
            # deltas flushed after the load command was sent are in the store under the segment key
            delta_path = desc.delta_path or segment_key(collection_id, desc.segment_id, "delta")
            if self.store.exists(delta_path):
                delta = DeltaLog.from_bytes(self.store.get(delta_path))
            seg = LoadedSegment(desc, columns, DeleteBitmap(desc.segment_id, len(columns)), _pk_rows(columns))
            for i, pk in enumerate(columns.pks):
                if delta.deleted_after(pk, columns.lsn(i)):
                    seg.bitmap.set(i)
            for pending in served.deletes.values():
                for _, pk, ts in pending:
                    seg.apply_delete(pk, ts)
            for name, path in desc.index_paths.items():
                seg.indexes[name] = index_from_bytes(self.store.get(path), columns.vectors[name])
        except (LogvecError, OSError, KeyError) as exc:
            logger.warning(f"query node {self.node_id}: loading segment {desc.segment_id} failed: {exc}")
            self._publish("load_failed", collection=collection_id, segment=desc.segment_id, node=self.node_id)
            return
        self._maybe_compact(seg)
        served.sealed[desc.segment_id] = seg
        self._publish(
            "segment_loaded",
            collection=collection_id,
            segment=desc.segment_id,
            node=self.node_id,
            rows=len(seg.columns),
            migrate_from=migrate_from,
        )

    def _load_index(self, collection_id: int, segment_id: int, field_name: str, path: str) -> None:
        served = self.collections.get(collection_id)
        seg = None if served is None else served.sealed.get(segment_id)
        if seg is None:
            return
        vectors = seg.columns.vectors[field_name]
        if len(seg.columns) != seg.descriptor.row_count:
            # rows were compacted away, the stored index does not match them
            desc = read_collection(self.meta, collection_id)
            if desc is not None and desc.index_params:
                seg.indexes[field_name] = SegmentIndex.build(IndexParams.from_dict(desc.index_params), vectors)
            return
        try:
            index = index_from_bytes(self.store.get(path), vectors)
        except (LogvecError, OSError, KeyError) as exc:
            logger.warning(f"query node {self.node_id}: index of segment {segment_id} not loaded: {exc}")
            return
        seg.indexes[field_name] = index

    # ------------------------------------------------------------------
    # WAL
    # ------------------------------------------------------------------

    def _metric(self, served: ServedCollection) -> Metric:
        params = served.descriptor.index_params
        return Metric.parse(params["metric"]) if params else Metric.EUCLIDEAN

    def _apply_wal(self, served: ServedCollection, channel: str, offset: int, entry: LogEntry) -> None:
        if entry.kind is EntryKind.INSERT:
            if channel not in served.owned:
                return
            sid = int(entry.payload["segment"])
            if sid in served.released or sid in served.skip or sid in served.sealed:
                return
            buffer = served.growing.get(sid)
            if buffer is None:
                desc = served.descriptor
                segment = SegmentDescriptor(sid, desc.collection_id, desc.shard_of_channel(channel), channel)
                buffer = GrowingSegmentBuffer(
                    segment,
                    desc.schema,
                    self.segment_settings.slice_rows,
                    temp_index_nlist=self.segment_settings.temp_index_nlist,
                    metric=self._metric(served),
                )
                served.growing[sid] = buffer
            buffer.append(entry.entity(), offset)
        elif entry.kind is EntryKind.DELETE:
            pk, ts = entry.payload["pk"], entry.timestamp
            served.deletes.setdefault(channel, []).append((offset, pk, ts))
            for seg in list(served.sealed.values()):
                if seg.apply_delete(pk, ts):
                    self._maybe_compact(seg)
            for buffer in served.growing.values():
                buffer.apply_delete(pk, ts)

    def _prune_deletes(self, served: ServedCollection) -> None:
        for channel in list(served.deletes):
            record = self.meta.get(replay_key(channel))
            if record is not None:
                served.prune_deletes(channel, int(record["offset"]))

    # ------------------------------------------------------------------
    # Search
    # ------------------------------------------------------------------

    def guard_allows(self, collection_id: int, issue_ts: HlcTimestamp, tau_ms: float) -> bool:
        served = self.collections.get(collection_id)
        if served is None:
            return True
        return all(rules.guard_allows(issue_ts, sub.last_time_tick, tau_ms) for sub in served.subscriptions.values())

    def _coverage(self, served: ServedCollection) -> Tuple[List[int], List[str]]:
        return sorted([*served.sealed, *served.growing]), sorted(served.owned)

    def search_local(self, collection_id: int, request: SearchRequest, issue_ts: HlcTimestamp) -> Optional[PartialResult]:
        """Node-wise top-k, or None while the consistency guard makes the search wait."""
        served = self.collections.get(collection_id)
        if served is None:
            return PartialResult(self.node_id, [[] for _ in range(request.nq)])
        if not self.guard_allows(collection_id, issue_ts, request.tau_ms):
            return None
        schema = served.descriptor.schema
        expr = compile_filter(request.filter, schema)
        name = schema.vector_field(request.vector_field).name
        metric = request.metric
        pk_name = schema.primary_key.name

        sealed_masks = {sid: self._filter_mask(expr, seg.columns, pk_name) for sid, seg in served.sealed.items()}
        growing_masks = {
            sid: self._filter_mask(expr, buf.columns(), pk_name) if expr is not None else None
            for sid, buf in served.growing.items()
        }
        scanned = 0
        out: List[List[Hit]] = []
        for q in request.vectors:
            lists: List[List[Hit]] = []
            for sid, seg in served.sealed.items():
                index = seg.indexes.get(name)
                lists.append(
                    segment_search(
                        seg.columns.pks,
                        seg.columns.vectors[name],
                        q,
                        metric,
                        request.k,
                        sid,
                        index,
                        seg.bitmap.mask,
                        sealed_masks[sid],
                        self.index_settings.filter_oversample,
                    )
                )
                usable = index if index is not None and index.metric is metric else None
                scanned += estimated_rows_scanned(usable, len(seg.columns), request.k)
            for sid, buf in served.growing.items():
                rows, values, n = buf.search(q, metric, request.k, name, growing_masks[sid])
                lists.append([Hit(self._buffer_pk(buf, int(r)), float(v), sid) for r, v in zip(rows, values)])
                scanned += n
            out.append(merge_hits(lists, metric, request.k))
        segments, channels = self._coverage(served)
        return PartialResult(self.node_id, out, scanned, segments, channels)

    def query_local(
        self, collection_id: int, filter_text: Optional[str], issue_ts: HlcTimestamp, tau_ms: float
    ) -> Optional[PartialResult]:
        """Every live row matching the filter, as score-0 hits."""
        served = self.collections.get(collection_id)
        if served is None:
            return PartialResult(self.node_id, [[]])
        if not self.guard_allows(collection_id, issue_ts, tau_ms):
            return None
        schema = served.descriptor.schema
        expr = compile_filter(filter_text, schema)
        pk_name = schema.primary_key.name
        hits: List[Hit] = []
        scanned = 0
        for sid, seg in served.sealed.items():
            hits.extend(self._matching(seg.columns, seg.bitmap.mask, expr, pk_name, sid))
            scanned += len(seg.columns)
        for sid, buf in served.growing.items():
            hits.extend(self._matching(buf.columns(), buf.bitmap.mask, expr, pk_name, sid))
            scanned += buf.row_count
        segments, channels = self._coverage(served)
        return PartialResult(self.node_id, [hits], scanned, segments, channels)

    @staticmethod
    def _filter_mask(expr: Optional[FilterExpr], columns: SegmentColumns, pk_name: str) -> Optional[np.ndarray]:
        return None if expr is None else expr.evaluate(columns, pk_name)

    @staticmethod
    def _matching(
        columns: SegmentColumns, deleted: np.ndarray, expr: Optional[FilterExpr], pk_name: str, segment_id: int
    ) -> List[Hit]:
        n = len(columns)
        keep = np.ones(n, dtype=bool)
        keep[: min(n, deleted.shape[0])] &= ~deleted[:n]
        if expr is not None:
            keep &= expr.evaluate(columns, pk_name)
        return [Hit(columns.pks[i], 0.0, segment_id) for i in np.flatnonzero(keep)]

    @staticmethod
    def _buffer_pk(buffer: GrowingSegmentBuffer, row: int) -> PrimaryKey:
        s, r = divmod(row, buffer.slice_rows)
        if s < len(buffer.slices):
            return buffer.slices[s].pks[r]
        return buffer.open_rows[r].pk

    def describe(self) -> Dict[str, int]:
        return {
            "sealed_segments": sum(len(c.sealed) for c in self.collections.values()),
            "growing_segments": sum(len(c.growing) for c in self.collections.values()),
            "hosted_rows": self.hosted_rows(),
        }
