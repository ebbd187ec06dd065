"""
Module: root.py

Role of this file
-----------------
Root coordinator: data definition requests. It owns the collection catalogue
in the metastore and announces every change on the DDL channel, which is how
loggers, data nodes, the other coordinators and the proxies learn about
collections.

Metastore keys
--------------
    collection/{cid}          CollectionDescriptor.to_dict()
    collection_name/{name}    cid

Creating a collection also provisions its WAL channels (one per shard) and
writes a genesis checkpoint (no segments, replay from offset 0) so that
time travel works from the creation timestamp on.
"""

from __future__ import annotations

from typing import List, Optional

from loguru import logger

from logvec.algorithms.segment_index import IndexParams
from logvec.backbone.broker import LogBroker
from logvec.models.collection import CollectionDescriptor
from logvec.models.errors import CollectionExistsError, CollectionNotFoundError
from logvec.models.log_entry import LogEntry
from logvec.models.schema import Schema
from logvec.models.timestamps import Tso
from logvec.storage.checkpoint import Checkpoint, write_checkpoint
from logvec.storage.metastore import MetaStore
from logvec.storage.object_store import ObjectStore
from logvec.utils.constants import COORD_CHANNEL, DDL_CHANNEL


def collection_key(collection_id: int) -> str:
    return f"collection/{collection_id}"


def collection_name_key(name: str) -> str:
    return f"collection_name/{name}"


def read_collection(meta: MetaStore, collection_id: int) -> Optional[CollectionDescriptor]:
    data = meta.get(collection_key(collection_id))
    return None if data is None else CollectionDescriptor.from_dict(data)


def list_collection_descriptors(meta: MetaStore) -> List[CollectionDescriptor]:
    return [
        CollectionDescriptor.from_dict(v)
        for k, v in meta.list("collection/").items()
        if k.count("/") == 1
    ]


class RootCoordinator:
    def __init__(
        self,
        meta: MetaStore,
        broker: LogBroker,
        tso: Tso,
        store: ObjectStore,
        default_shards: int = 2,
    ) -> None:
        self.meta = meta
        self.broker = broker
        self.tso = tso
        self.store = store
        self.default_shards = default_shards
        broker.create_channel(DDL_CHANNEL)
        broker.create_channel(COORD_CHANNEL)

    # ------------------------------------------------------------------
    # Catalogue
    # ------------------------------------------------------------------

    def get_collection(self, name: str) -> CollectionDescriptor:
        cid = self.meta.get(collection_name_key(name))
        desc = None if cid is None else read_collection(self.meta, int(cid))
        if desc is None:
            raise CollectionNotFoundError(name)
        return desc

    def collection_by_id(self, collection_id: int) -> CollectionDescriptor:
        desc = read_collection(self.meta, collection_id)
        if desc is None:
            raise CollectionNotFoundError(str(collection_id))
        return desc

    def list_collections(self) -> List[CollectionDescriptor]:
        return sorted(list_collection_descriptors(self.meta), key=lambda d: d.name)

    def has_collection(self, name: str) -> bool:
        return self.meta.get(collection_name_key(name)) is not None

    # ------------------------------------------------------------------
    # DDL
    # ------------------------------------------------------------------

    def create_collection(
        self,
        name: str,
        schema: Schema,
        shard_count: Optional[int] = None,
        index_params: Optional[IndexParams] = None,
    ) -> CollectionDescriptor:
        if not name:
            raise ValueError("collection name must not be empty")
        if self.has_collection(name):
            raise CollectionExistsError(name)
        shards = self.default_shards if shard_count is None else int(shard_count)
        cid = self.meta.next_id("collection")

        with self.broker.writer_lock(DDL_CHANNEL):
            ts = self.tso.allocate()
            desc = CollectionDescriptor(
                collection_id=cid,
                name=name,
                schema=schema,
                shard_count=shards,
                created_ts=ts,
                index_params=None if index_params is None else index_params.to_dict(),
            )
            for channel in desc.channels:
                self.broker.create_channel(channel)
            self.meta.put(collection_key(cid), desc.to_dict())
            self.meta.put(collection_name_key(name), cid)
            self.broker.publish(DDL_CHANNEL, LogEntry.ddl(ts, "create_collection", collection=desc.to_dict()))

        write_checkpoint(self.store, Checkpoint(cid, ts, [], {ch: 0 for ch in desc.channels}))
        logger.info(f"collection {name!r} created (id {cid}, {shards} shards)")
        return desc

    def drop_collection(self, name: str) -> CollectionDescriptor:
        desc = self.get_collection(name)
        self.broker.publish_stamped(
            DDL_CHANNEL,
            self.tso,
            lambda ts: LogEntry.ddl(ts, "drop_collection", collection_id=desc.collection_id, name=name),
        )
        self.meta.delete(collection_name_key(name))
        self.meta.delete(collection_key(desc.collection_id))
        logger.info(f"collection {name!r} dropped")
        return desc

    def create_index(self, name: str, params: IndexParams) -> CollectionDescriptor:
        """Set the collection's index; sealed segments get it through batch indexing."""
        desc = self.get_collection(name)
        desc.index_params = params.to_dict()
        self.meta.put(collection_key(desc.collection_id), desc.to_dict())
        self.broker.publish_stamped(
            DDL_CHANNEL,
            self.tso,
            lambda ts: LogEntry.ddl(ts, "create_index", collection_id=desc.collection_id, params=params.to_dict()),
        )
        logger.info(f"index {params.kind} requested on collection {name!r}")
        return desc

    def set_loaded(self, name: str, loaded: bool) -> CollectionDescriptor:
        """load_collection / release_collection, announced on the coord channel."""
        desc = self.get_collection(name)
        desc.loaded = loaded
        self.meta.put(collection_key(desc.collection_id), desc.to_dict())
        message = "load_collection" if loaded else "release_collection"
        self.broker.publish_stamped(
            COORD_CHANNEL, self.tso, lambda ts: LogEntry.coord(ts, message, collection=desc.collection_id)
        )
        return desc
