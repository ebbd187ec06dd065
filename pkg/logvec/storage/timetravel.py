"""
Module: timetravel.py

Role of this file
-----------------
Restoring a collection as it was at a past timestamp T, and expiring the
history that is no longer needed.

restore_at(T):
    1. take the newest checkpoint at or before T;
    2. gather the insert and delete events it reaches: the binlog rows and
       delta logs of its segments, plus the WAL of every channel from the
       checkpoint's replay offset;
    3. apply, in timestamp order, every event with ts <= T.
The result is an in-memory Snapshot answering exact (FLAT) searches and
filtered queries.

gc_expired(now, expiration):
    keeps the newest checkpoint older than the expiration window and every
    newer one, deletes older checkpoints, deletes retired segments no
    remaining checkpoint references, truncates the WAL below what is still
    needed and records the floor under which restores fail with
    HistoryExpiredError.

Metastore keys
--------------
    gc/{cid}/floor      encoded timestamp of the oldest restorable checkpoint

Who uses this file
------------------
- cluster.py (restore_at, gc) and nodes/proxy.py through the cluster's
  snapshot provider.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger

from logvec.algorithms.filtering import compile_filter
from logvec.algorithms.segment_search import segment_search
from logvec.algorithms.topk import merge_hits
from logvec.backbone.broker import LogBroker
from logvec.models.collection import CollectionDescriptor
from logvec.models.columns import SegmentColumns
from logvec.models.errors import HistoryExpiredError, NoCheckpointError
from logvec.models.log_entry import EntryKind
from logvec.models.schema import Entity, PrimaryKey
from logvec.models.search import SearchRequest, SearchResult
from logvec.models.segment import SegmentDescriptor
from logvec.models.timestamps import HlcTimestamp
from logvec.storage.binlog import load_segment_columns
from logvec.storage.checkpoint import (
    checkpoint_key,
    latest_at_or_before,
    list_checkpoints,
    load_checkpoint,
)
from logvec.storage.deltalog import DeltaLog
from logvec.storage.metastore import MetaStore
from logvec.storage.object_store import ObjectStore, segment_key, segment_prefix


def floor_key(collection_id: int) -> str:
    return f"gc/{collection_id}/floor"


def history_floor(meta: MetaStore, collection_id: int) -> Optional[HlcTimestamp]:
    value = meta.get(floor_key(collection_id))
    return None if value is None else HlcTimestamp.decode(int(value))


# ---------------------------------------------------------------------------
# Snapshot
# ---------------------------------------------------------------------------

class Snapshot:
    def __init__(self, descriptor: CollectionDescriptor, at: HlcTimestamp, entities: List[Entity]) -> None:
        self.descriptor = descriptor
        self.at = at
        self.schema = descriptor.schema
        self.columns = SegmentColumns.from_entities(self.schema, entities)

    @property
    def row_count(self) -> int:
        return len(self.columns)

    def search(self, request: SearchRequest) -> SearchResult:
        expr = compile_filter(request.filter, self.schema)
        mask = None if expr is None else expr.evaluate(self.columns, self.schema.primary_key.name)
        name = self.schema.vector_field(request.vector_field).name
        vectors = self.columns.vectors[name]
        hits = [
            merge_hits(
                [segment_search(self.columns.pks, vectors, q, request.metric, request.k, -1, filter_mask=mask)],
                request.metric,
                request.k,
            )
            for q in request.vectors
        ]
        return SearchResult(hits=hits, issue_ts=self.at, rows_scanned={"snapshot": len(self.columns)})

    def query(self, filter_text: Optional[str] = None) -> List[PrimaryKey]:
        expr = compile_filter(filter_text, self.schema)
        if expr is None:
            keep = np.ones(len(self.columns), dtype=bool)
        else:
            keep = expr.evaluate(self.columns, self.schema.primary_key.name)
        pks = [self.columns.pks[i] for i in np.flatnonzero(keep)]
        return sorted(pks, key=lambda pk: (isinstance(pk, str), pk))


# ---------------------------------------------------------------------------
# Restore
# ---------------------------------------------------------------------------

Event = Tuple[HlcTimestamp, int, PrimaryKey, Optional[Entity]]

_INSERT, _DELETE = 0, 1


def _segment_events(store: ObjectStore, descriptor: CollectionDescriptor, seg: SegmentDescriptor) -> List[Event]:
    events: List[Event] = []
    columns = load_segment_columns(store, descriptor.schema, seg.binlog_paths)
    for i in range(len(columns)):
        events.append((columns.lsn(i), _INSERT, columns.pks[i], columns.entity(i)))
    key = segment_key(seg.collection_id, seg.segment_id, "delta")
    if store.exists(key):
        for pk, ts in DeltaLog.from_bytes(store.get(key)).entries():
            events.append((ts, _DELETE, pk, None))
    return events


def restore_at(
    store: ObjectStore,
    meta: MetaStore,
    broker: LogBroker,
    descriptor: CollectionDescriptor,
    at: HlcTimestamp,
) -> Snapshot:
    cid = descriptor.collection_id
    floor = history_floor(meta, cid)
    if floor is not None and at < floor:
        raise HistoryExpiredError(f"history of collection {descriptor.name!r} before {floor} was collected")
    checkpoint = latest_at_or_before(store, cid, at)
    if checkpoint is None:
        raise NoCheckpointError(f"no checkpoint of collection {descriptor.name!r} at or before {at}")

    events: List[Event] = []
    for seg in checkpoint.segments:
        events.extend(_segment_events(store, descriptor, seg))
    for channel, offset in checkpoint.replay_from.items():
        if not broker.has_channel(channel):
            continue
        if offset < broker.base_offset(channel):
            raise HistoryExpiredError(f"WAL of {channel} was truncated past offset {offset}")
        for _, entry in broker.read(channel, offset):
            if entry.timestamp > at:
                continue
            if entry.kind is EntryKind.INSERT:
                entity = entry.entity()
                events.append((entry.timestamp, _INSERT, entity.pk, entity))
            elif entry.kind is EntryKind.DELETE:
                events.append((entry.timestamp, _DELETE, entry.payload["pk"], None))

    seen = set()
    live: Dict[PrimaryKey, Entity] = {}
    for ts, kind, pk, entity in sorted(events, key=lambda e: (e[0], e[1])):
        if ts > at or (kind, pk, ts) in seen:
            continue
        seen.add((kind, pk, ts))
        if kind == _INSERT and entity is not None:
            live[pk] = entity
        else:
            current = live.get(pk)
            if current is not None and current.lsn is not None and current.lsn < ts:
                del live[pk]
    logger.info(
        f"collection {descriptor.name!r} restored at {at} from checkpoint {checkpoint.checkpoint_ts}: {len(live)} rows"
    )
    ordered = sorted(live.values(), key=lambda e: e.lsn)
    return Snapshot(descriptor, at, ordered)


# ---------------------------------------------------------------------------
# Expiration
# ---------------------------------------------------------------------------

@dataclass
class GcReport:
    checkpoints_deleted: List[str] = field(default_factory=list)
    segments_deleted: List[int] = field(default_factory=list)
    truncated: Dict[str, int] = field(default_factory=dict)
    floor: Optional[HlcTimestamp] = None

    def to_dict(self) -> Dict:
        return {
            "checkpoints_deleted": self.checkpoints_deleted,
            "segments_deleted": self.segments_deleted,
            "truncated": self.truncated,
            "floor": None if self.floor is None else self.floor.encode(),
        }


def gc_expired(
    store: ObjectStore,
    meta: MetaStore,
    broker: LogBroker,
    descriptor: CollectionDescriptor,
    now: HlcTimestamp,
    expiration_ms: float,
    segments: List[SegmentDescriptor],
    live_replay: Dict[str, int],
    forget_segment: Callable[[int], None],
) -> GcReport:
    """
    `segments` are the collection's current descriptors, `live_replay` the
    lowest WAL offset each channel still needs for live state (data node
    replay offsets, entity map manifests).
    """
    report = GcReport()
    if math.isinf(expiration_ms):
        return report
    cid = descriptor.collection_id
    cutoff = now.physical - int(expiration_ms)
    stamps = list_checkpoints(store, cid)
    expired = [ts for ts in stamps if ts.physical <= cutoff]
    if not expired:
        return report
    keep_from = expired[-1]
    for ts in stamps:
        if ts < keep_from:
            key = checkpoint_key(cid, ts)
            store.delete(key)
            report.checkpoints_deleted.append(key)

    remaining = [load_checkpoint(store, checkpoint_key(cid, ts)) for ts in stamps if ts >= keep_from]
    referenced = {sid for c in remaining for sid in c.segment_ids()}
    for seg in segments:
        if seg.is_live or seg.segment_id in referenced:
            continue
        store.delete_prefix(segment_prefix(cid, seg.segment_id))
        forget_segment(seg.segment_id)
        report.segments_deleted.append(seg.segment_id)

    for channel in descriptor.channels:
        if not broker.has_channel(channel):
            continue
        needed = [c.replay_from[channel] for c in remaining if channel in c.replay_from]
        if channel in live_replay:
            needed.append(live_replay[channel])
        bound = min(needed) if needed else broker.base_offset(channel)
        if bound > broker.base_offset(channel):
            broker.truncate(channel, bound)
            report.truncated[channel] = bound

    meta.put(floor_key(cid), keep_from.encode())
    report.floor = keep_from
    logger.info(
        f"gc of collection {descriptor.name!r}: {len(report.checkpoints_deleted)} checkpoints, "
        f"{len(report.segments_deleted)} segments removed, floor {keep_from}"
    )
    return report
