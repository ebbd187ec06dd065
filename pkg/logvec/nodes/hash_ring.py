"""
Module: hash_ring.py

Role of this file
-----------------
Consistent-hash ring that decides which logger writes which shard.

The ring has a fixed number of logical buckets. Every logger is placed on
the 32-bit ring at `vnodes` positions (murmur3 of "<logger>#<i>"); a bucket
belongs to the first logger position clockwise from the bucket's own hash.
A shard maps to a bucket by hashing "<collection>/<shard>".

Adding or removing a logger only changes the owner of buckets that fall
between that logger's positions and their predecessors: every other bucket
keeps its owner.

Entities map to shards by hashing their primary key modulo the collection's
shard count, so a pk always lands on the same WAL channel.

Who uses this file
------------------
- nodes/wal_logger.py (LoggerGroup) to route inserts and deletes.
- coordinators/root.py when loggers are added or removed.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Dict, List, Tuple

import mmh3
from sortedcontainers import SortedList

from logvec.models.collection import CollectionDescriptor
from logvec.models.errors import EmptyRingError
from logvec.models.schema import PrimaryKey


def _hash(key: str) -> int:
    return mmh3.hash(key, signed=False)


def shard_of(pk: PrimaryKey, shard_count: int) -> int:
    """Shard of a primary key. Integer and string keys hash their text form."""
    return _hash(f"pk:{pk}") % shard_count


@dataclass(frozen=True)
class Route:
    shard_id: int
    channel: str
    logger_id: str


class HashRing:
    def __init__(self, buckets: int = 64, vnodes: int = 16) -> None:
        if buckets < 1 or vnodes < 1:
            raise ValueError("ring needs at least one bucket and one virtual node")
        self.buckets = buckets
        self.vnodes = vnodes
        self._ring: SortedList = SortedList()
        self._loggers: List[str] = []
        self._lock = threading.Lock()
        self._bucket_hash = [_hash(f"bucket#{b}") for b in range(buckets)]

    # ------------------------------------------------------------------
    # Membership
    # ------------------------------------------------------------------

    @property
    def loggers(self) -> List[str]:
        return sorted(self._loggers)

    def add_logger(self, logger_id: str) -> bool:
        with self._lock:
            if logger_id in self._loggers:
                return False
            self._loggers.append(logger_id)
            for i in range(self.vnodes):
                self._ring.add((_hash(f"{logger_id}#{i}"), logger_id))
            return True

    def remove_logger(self, logger_id: str) -> bool:
        with self._lock:
            if logger_id not in self._loggers:
                return False
            self._loggers.remove(logger_id)
            for i in range(self.vnodes):
                self._ring.discard((_hash(f"{logger_id}#{i}"), logger_id))
            return True

    # ------------------------------------------------------------------
    # Lookups
    # ------------------------------------------------------------------

    def owner_of_bucket(self, bucket: int) -> str:
        with self._lock:
            if not self._ring:
                raise EmptyRingError("no logger on the ring")
            h = self._bucket_hash[bucket]
            i = self._ring.bisect_left((h, ""))
            return self._ring[i % len(self._ring)][1]

    def assignments(self) -> Dict[int, str]:
        """bucket -> logger id."""
        return {b: self.owner_of_bucket(b) for b in range(self.buckets)}

    def bucket_of_shard(self, collection_id: int, shard_id: int) -> int:
        return _hash(f"{collection_id}/{shard_id}") % self.buckets

    def owner_of_shard(self, collection_id: int, shard_id: int) -> str:
        return self.owner_of_bucket(self.bucket_of_shard(collection_id, shard_id))

    def route(self, pk: PrimaryKey, collection: CollectionDescriptor) -> Route:
        shard = shard_of(pk, collection.shard_count)
        return Route(shard, collection.channel_for(shard), self.owner_of_shard(collection.collection_id, shard))

    def shards_of(self, logger_id: str, collections: List[CollectionDescriptor]) -> List[Tuple[int, int]]:
        """(collection id, shard id) pairs owned by `logger_id`."""
        return [
            (c.collection_id, s)
            for c in collections
            for s in range(c.shard_count)
            if self.owner_of_shard(c.collection_id, s) == logger_id
        ]
