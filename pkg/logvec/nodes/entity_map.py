"""
Module: entity_map.py

Role of this file
-----------------
Primary key -> segment id map of one shard, kept by the shard's logger to
check existence on delete and to reject duplicate keys on insert.

It is a two-level LSM: a sorted in-memory memtable on top of immutable
sorted runs in the object store. Lookups consult the memtable, then the runs
newest to oldest; a tombstone (deleted pk) hides older entries.

    collection/{cid}/shard/{shard}/map/run-{n}     one SortedRun per flush
    collection/{cid}/shard/{shard}/map/manifest    {"runs": [...], "wal_offset": n}

`wal_offset` is the WAL offset the flushed state covers: recovery loads the
runs and replays the shard's WAL from there.
"""

from __future__ import annotations

from typing import List, Optional

from loguru import logger
from sortedcontainers import SortedDict

from logvec.models.schema import PrimaryKey
from logvec.storage.json_io import canonical_json, parse_json
from logvec.storage.object_store import ObjectStore
from logvec.storage.sorted_run import SortedRun, is_tombstone
from logvec.utils.constants import TOMBSTONE_SEGMENT
from logvec.utils.retry import with_retries


def map_prefix(collection_id: int, shard_id: int) -> str:
    return f"collection/{collection_id}/shard/{shard_id}/map/"


class EntitySegmentMap:
    def __init__(self, store: ObjectStore, collection_id: int, shard_id: int) -> None:
        self.store = store
        self.collection_id = collection_id
        self.shard_id = shard_id
        self.memtable: SortedDict = SortedDict()
        self.runs: List[SortedRun] = []
        self.run_keys: List[str] = []
        self.wal_offset = 0

    @property
    def manifest_key(self) -> str:
        return map_prefix(self.collection_id, self.shard_id) + "manifest"

    def __contains__(self, pk: PrimaryKey) -> bool:
        return self.lookup(pk) is not None

    # ------------------------------------------------------------------
    # Updates
    # ------------------------------------------------------------------

    def put(self, pk: PrimaryKey, segment_id: int) -> None:
        self.memtable[pk] = segment_id

    def remove(self, pk: PrimaryKey) -> None:
        self.memtable[pk] = TOMBSTONE_SEGMENT

    def remap(self, pks: List[PrimaryKey], old_segments: List[int], new_segment: int) -> int:
        """Point pks that still live in one of `old_segments` at `new_segment`."""
        olds = set(old_segments)
        moved = 0
        for pk in pks:
            if self.lookup(pk) in olds:
                self.memtable[pk] = new_segment
                moved += 1
        return moved

    # ------------------------------------------------------------------
    # Lookups
    # ------------------------------------------------------------------

    def lookup(self, pk: PrimaryKey) -> Optional[int]:
        """Segment of a live pk, None if unknown or deleted."""
        seg = self.memtable.get(pk)
        if seg is None:
            for run in reversed(self.runs):
                seg = run.lookup(pk)
                if seg is not None:
                    break
        if seg is None or is_tombstone(seg):
            return None
        return int(seg)

    # ------------------------------------------------------------------
    # Persistence
    # ------------------------------------------------------------------

    def flush(self, wal_offset: int) -> Optional[str]:
        """
        Write the memtable as a new sorted run and clear it. The memtable is
        kept if the write fails. Returns the run key (None if nothing to flush).
        """
        if not self.memtable:
            self.wal_offset = max(self.wal_offset, wal_offset)
            self._write_manifest()
            return None
        run = SortedRun(list(self.memtable.items()))
        key = f"{map_prefix(self.collection_id, self.shard_id)}run-{len(self.run_keys):06d}"
        payload = run.to_bytes()
        with_retries(lambda: self.store.put(key, payload), what=f"sorted run {key}")
        self.runs.append(run)
        self.run_keys.append(key)
        self.memtable = SortedDict()
        self.wal_offset = max(self.wal_offset, wal_offset)
        self._write_manifest()
        logger.debug(f"entity map {self.collection_id}/{self.shard_id}: flushed {len(run)} keys to {key}")
        return key

    def _write_manifest(self) -> None:
        payload = canonical_json({"runs": self.run_keys, "wal_offset": self.wal_offset})
        with_retries(lambda: self.store.put(self.manifest_key, payload), what="entity map manifest")

    @classmethod
    def load(cls, store: ObjectStore, collection_id: int, shard_id: int) -> "EntitySegmentMap":
        """Runs listed in the manifest; an empty map when nothing was flushed yet."""
        m = cls(store, collection_id, shard_id)
        if not store.exists(m.manifest_key):
            return m
        manifest = parse_json(store.get(m.manifest_key))
        for key in manifest.get("runs", []):
            m.runs.append(SortedRun.from_bytes(store.get(key)))
            m.run_keys.append(key)
        m.wal_offset = int(manifest.get("wal_offset", 0))
        return m
