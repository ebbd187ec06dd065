"""
Module: cluster.py

Role of this file
-----------------
One process that runs a whole deployment: log broker, metastore, object
store, TSO, the four coordinators' worth of logic and every worker node.
It is the public API of the engine (collections, writes, searches,
time travel, node membership) and the driver of the simulation.

Components talk only through the log (DDL, coord and WAL channels), the
metastore and the object store. The cluster moves them forward with pump(),
in a fixed order so that a virtual-clock run is deterministic:

    1. time-ticks (if an interval passed)
    2. data coordinator           (DDL, channel assignment)
    3. loggers                    (DDL, merged-segment remaps)
    4. data nodes                 (coord commands, then WAL)
    5. index coordinator          (new seals, finished builds)
    6. query coordinator          (DDL, coord, health, balance, scaling)
    7. proxy                      (distribution)
    8. query nodes                (coord commands, then WAL, heartbeat)
    9. periodic jobs              (entity map flush, checkpoints, merges)

With a VirtualClock time only moves in step()/settle(); with a SystemClock
ticks and timeouts follow the wall clock.

Who uses this file
------------------
- cli/main.py opens a Cluster on the store root.
- sim/workload.py drives one on a virtual clock.
- tests build small clusters under tmp_path.
"""

from __future__ import annotations

import math
import time
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
from loguru import logger

from logvec.algorithms.segment_index import IndexParams
from logvec.backbone.broker import LogBroker
from logvec.backbone.time_tick import TimeTickEmitter
from logvec.config import EngineConfig
from logvec.coordinators.data import DataCoordinator
from logvec.coordinators.index import IndexCoordinator
from logvec.coordinators.query import QueryCoordinator
from logvec.coordinators.root import RootCoordinator
from logvec.models.collection import CollectionDescriptor
from logvec.models.errors import ConfigurationError
from logvec.models.schema import Entity, PrimaryKey, Schema
from logvec.models.search import SearchRequest, SearchResult
from logvec.models.segment import SegmentDescriptor
from logvec.models.timestamps import HlcTimestamp, Tso
from logvec.nodes.data_node import DataNode
from logvec.nodes.entity_map import EntitySegmentMap
from logvec.nodes.index_node import IndexNode
from logvec.nodes.proxy import Proxy
from logvec.nodes.query_node import QueryNode
from logvec.nodes.wal_logger import LoggerGroup
from logvec.storage.metastore import MetaStore
from logvec.storage.object_store import ObjectStore
from logvec.storage.timetravel import GcReport, Snapshot, gc_expired, restore_at
from logvec.utils.clock import Clock, VirtualClock
from logvec.utils.vector_math import Metric


class Cluster:
    def __init__(
        self,
        root: str | Path,
        config: Optional[EngineConfig] = None,
        clock: Optional[Clock] = None,
    ) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.config = config or EngineConfig()
        self.clock: Clock = clock or VirtualClock()
        self.virtual = isinstance(self.clock, VirtualClock)

        self.meta = MetaStore(self.root)
        self.broker = LogBroker(self.root)
        self.store = ObjectStore(self.root)
        last = self.broker.max_timestamp()
        if last is not None and isinstance(self.clock, VirtualClock) and self.clock.now_ms() <= last.physical:
            self.clock.set(last.physical + 1)
        self.tso = Tso(self.clock.now_ms, last)

        tick_ms = self.config.log.tick_interval_ms if self.virtual else self.config.log.wall_tick_interval_ms
        self.ticks = TimeTickEmitter(self.broker, self.tso, tick_ms, self.clock.now_ms)
        nodes = self.config.nodes
        self.root_coord = RootCoordinator(self.meta, self.broker, self.tso, self.store, nodes.default_shards)
        self.data_coord = DataCoordinator(self.meta, self.broker, self.tso, self.store)
        self.loggers = LoggerGroup(
            self.broker,
            self.tso,
            self.store,
            self.data_coord,
            self.ticks,
            self.config.segments,
            nodes.ring_buckets,
            nodes.ring_vnodes,
        )
        self.data_nodes: Dict[str, DataNode] = {}
        self.index_coord = IndexCoordinator(
            self.meta,
            self.broker,
            self.tso,
            self.data_coord,
            self.clock,
            lambda node_id: IndexNode(node_id, self.store, self.clock.now_ms()),
            self.config.coordination,
            self.config.cost.index_ms_per_row,
        )
        self.query_coord = QueryCoordinator(
            self.meta, self.broker, self.tso, self.data_coord, self.clock, self.config.coordination, provisioner=self
        )
        self.query_nodes: Dict[str, QueryNode] = {}
        timeout = (
            self.config.consistency.node_timeout_ms if self.virtual else self.config.consistency.wall_node_timeout_ms
        )
        self.proxy = Proxy(
            "proxy-0",
            self.broker,
            self.tso,
            self.root_coord,
            self.clock,
            self.alive_query_nodes,
            self.step,
            self.config.consistency,
            snapshots=lambda desc, ts: restore_at(self.store, self.meta, self.broker, desc, ts),
            node_timeout_ms=timeout,
        )
        self._entries_since_checkpoint = 0
        self._last_checkpoint_ms = self.clock.now_ms()

        for desc in self.root_coord.list_collections():
            self.loggers.adopt_collection(desc)
        for _ in range(nodes.loggers):
            self.add_logger()
        for _ in range(nodes.data_nodes):
            self.add_data_node()
        for _ in range(nodes.index_nodes):
            self.add_index_node()
        for _ in range(nodes.query_nodes):
            self.add_query_node()
        self.settle()
        logger.info(
            f"cluster open at {self.root}: {len(self.loggers.loggers)} loggers, {len(self.data_nodes)} data nodes, "
            f"{len(self.index_coord.nodes)} index nodes, {len(self.query_nodes)} query nodes"
        )

    # ------------------------------------------------------------------
    # Membership
    # ------------------------------------------------------------------

    def _new_id(self, kind: str) -> str:
        return f"{kind}-{self.meta.next_id(f'node/{kind}')}"

    def add_logger(self) -> str:
        logger_id = self._new_id("logger")
        self.loggers.add_logger(logger_id)
        return logger_id

    def remove_logger(self, logger_id: str) -> None:
        if len(self.loggers.loggers) <= 1:
            raise ConfigurationError("the last logger cannot be removed")
        self.loggers.remove_logger(logger_id)

    def add_data_node(self) -> str:
        node_id = self._new_id("data")
        self.data_nodes[node_id] = DataNode(
            node_id, self.broker, self.tso, self.meta, self.store, self.data_coord, self.config.segments
        )
        self.data_coord.set_data_nodes(list(self.data_nodes))
        return node_id

    def remove_data_node(self, node_id: str) -> None:
        if len(self.data_nodes) <= 1:
            raise ConfigurationError("the last data node cannot be removed")
        self.data_nodes.pop(node_id)
        self.data_coord.set_data_nodes(list(self.data_nodes))

    def add_index_node(self) -> str:
        node_id = self._new_id("index")
        self.index_coord.add_node(IndexNode(node_id, self.store, self.clock.now_ms()))
        return node_id

    def remove_index_node(self, node_id: str) -> None:
        self.index_coord.remove_node(node_id)

    def _make_query_node(self, node_id: str) -> QueryNode:
        return QueryNode(
            node_id,
            self.broker,
            self.tso,
            self.meta,
            self.store,
            self.clock,
            self.config.index,
            self.config.segments,
            self.config.coordination.heartbeat_interval_ms,
        )

    def add_query_node(self) -> str:
        node_id = self._new_id("query")
        node = self._make_query_node(node_id)
        self.query_nodes[node_id] = node
        node.heartbeat(force=True)
        self.query_coord.register_node(node_id)
        return node_id

    def remove_query_node(self, node_id: str) -> None:
        """Graceful removal: the node is drained first."""
        self.query_coord.drain(node_id)

    def kill_query_node(self, node_id: str) -> None:
        """Crash: the node stops answering and heartbeating; the coordinator notices on its own."""
        self.query_nodes[node_id].alive = False
        logger.warning(f"query node {node_id} killed")

    def restart_query_node(self, node_id: str) -> None:
        node = self._make_query_node(node_id)
        self.query_nodes[node_id] = node
        node.heartbeat(force=True)
        self.query_coord.node_restarted(node_id)

    def alive_query_nodes(self) -> Dict[str, QueryNode]:
        return {n: q for n, q in sorted(self.query_nodes.items()) if q.alive}

    # provisioner used by the query coordinator's autoscaler

    def provision_query_node(self) -> str:
        return self.add_query_node()

    def decommission_query_node(self, node_id: str) -> None:
        self.query_nodes.pop(node_id, None)

    # ------------------------------------------------------------------
    # Driving
    # ------------------------------------------------------------------

    def pump(self) -> int:
        handled = len(self.ticks.maybe_emit())
        handled += self.data_coord.pump()
        handled += self.loggers.pump()
        for node in list(self.data_nodes.values()):
            handled += node.pump()
        handled += self.index_coord.pump()
        handled += self.query_coord.pump()
        handled += self.proxy.refresh()
        for node in list(self.query_nodes.values()):
            handled += node.pump()
        self._periodic()
        return handled

    def step(self, ms: int) -> int:
        if isinstance(self.clock, VirtualClock):
            self.clock.advance(ms)
        else:
            time.sleep(ms / 1000.0)
        return self.pump()

    def settle(self, max_rounds: int = 10_000) -> int:
        """Pump until nothing moves, finishing in-flight index builds."""
        self.ticks.emit_now()
        total = 0
        for _ in range(max_rounds):
            handled = self.pump()
            total += handled
            if handled:
                continue
            due = self.index_coord.next_completion_ms()
            if due is None:
                return total
            # heartbeat-sized steps, so waiting on a build never looks like a dead node
            wait = min(max(1, due - self.clock.now_ms()), self.config.coordination.heartbeat_interval_ms)
            self.step(wait)
        logger.warning(f"settle stopped after {max_rounds} rounds")
        return total

    def _periodic(self) -> None:
        settings = self.config.checkpoint
        now = self.clock.now_ms()
        due = self._entries_since_checkpoint >= settings.every_entries or (
            self._entries_since_checkpoint > 0 and now - self._last_checkpoint_ms >= settings.every_ms
        )
        if due:
            self.checkpoint_all()
        if self.config.segments.auto_merge:
            for desc in self.root_coord.list_collections():
                self.merge(desc.name)

    # ------------------------------------------------------------------
    # Collections
    # ------------------------------------------------------------------

    def create_collection(
        self,
        name: str,
        schema: Schema,
        shard_count: Optional[int] = None,
        index_params: Optional[IndexParams] = None,
    ) -> CollectionDescriptor:
        if index_params is None and self.config.index.kind != "flat":
            index_params = IndexParams.from_settings(self.config.index)
        desc = self.root_coord.create_collection(name, schema, shard_count, index_params)
        self.pump()
        return desc

    def drop_collection(self, name: str) -> None:
        self.root_coord.drop_collection(name)
        self.pump()

    def create_index(self, name: str, params: IndexParams) -> None:
        self.root_coord.create_index(name, params)
        self.pump()

    def load_collection(self, name: str) -> None:
        self.root_coord.set_loaded(name, True)
        self.pump()

    def release_collection(self, name: str) -> None:
        self.root_coord.set_loaded(name, False)
        self.pump()

    def list_collections(self) -> List[CollectionDescriptor]:
        return self.root_coord.list_collections()

    def collection(self, name: str) -> CollectionDescriptor:
        return self.root_coord.get_collection(name)

    # ------------------------------------------------------------------
    # Writes
    # ------------------------------------------------------------------

    def insert(self, name: str, entities: Iterable[Entity]) -> List[Entity]:
        desc = self.collection(name)
        logged = self.loggers.insert(desc, entities)
        self._entries_since_checkpoint += len(logged)
        return logged

    def delete(self, name: str, pks: Iterable[PrimaryKey]) -> List[HlcTimestamp]:
        desc = self.collection(name)
        stamps = self.loggers.delete(desc, pks)
        self._entries_since_checkpoint += len(stamps)
        return stamps

    def delete_where(self, name: str, filter_text: str) -> int:
        pks = self.query(name, filter_text)
        self.delete(name, pks)
        return len(pks)

    def seal(self, name: str) -> List[int]:
        sealed = self.loggers.seal(self.collection(name))
        self.pump()
        return sealed

    def merge(self, name: str) -> List[SegmentDescriptor]:
        desc = self.collection(name)
        seg = self.config.segments
        merged: List[SegmentDescriptor] = []
        for shard, descs in self.data_coord.plan_merges(
            desc.collection_id, seg.seal_rows, seg.merge_min_segments, seg.merge_small_fraction
        ).items():
            owner = self.data_coord.channel_owner.get(desc.channel_for(shard))
            node = self.data_nodes.get(owner or "")
            if node is not None:
                merged.append(node.merge_segments(descs))
        return merged

    # ------------------------------------------------------------------
    # Reads
    # ------------------------------------------------------------------

    def _metric_of(self, desc: CollectionDescriptor) -> Metric:
        return Metric.parse(desc.index_params["metric"]) if desc.index_params else Metric.EUCLIDEAN

    def make_request(
        self,
        name: str,
        vectors: Any,
        k: int = 10,
        metric: Optional[str | Metric] = None,
        tau_ms: Optional[float] = None,
        filter: Optional[str] = None,
        travel_ts: Optional[HlcTimestamp] = None,
        vector_field: Optional[str] = None,
    ) -> SearchRequest:
        desc = self.collection(name)
        return SearchRequest(
            collection=name,
            vectors=np.asarray(vectors, dtype=np.float32),
            k=k,
            metric=self._metric_of(desc) if metric is None else Metric.parse(metric),
            tau_ms=self.config.consistency.default_tau_ms if tau_ms is None else tau_ms,
            filter=filter,
            travel_ts=travel_ts,
            vector_field=vector_field,
        )

    def search(self, name: str, vectors: Any, k: int = 10, **options: Any) -> SearchResult:
        return self.proxy.search(self.make_request(name, vectors, k, **options))

    def search_many(self, requests: Sequence[SearchRequest]) -> List[SearchResult]:
        return self.proxy.search_many(list(requests), self.config.nodes.batching)

    def query(
        self,
        name: str,
        filter_text: Optional[str] = None,
        tau_ms: float = 0.0,
        travel_ts: Optional[HlcTimestamp] = None,
    ) -> List[PrimaryKey]:
        return self.proxy.query(name, filter_text, tau_ms, travel_ts)

    def count(self, name: str) -> int:
        return len(self.query(name, tau_ms=math.inf))

    # ------------------------------------------------------------------
    # History
    # ------------------------------------------------------------------

    def now(self) -> HlcTimestamp:
        return self.tso.allocate()

    def restore_at(self, name: str, ts: HlcTimestamp) -> Snapshot:
        return restore_at(self.store, self.meta, self.broker, self.collection(name), ts)

    def checkpoint(self, name: str) -> str:
        self.loggers.flush_maps()
        for node in self.data_nodes.values():
            node.flush()
        return self.data_coord.write_checkpoint(self.collection(name).collection_id)

    def checkpoint_all(self) -> List[str]:
        keys = [self.checkpoint(d.name) for d in self.list_collections()]
        self._entries_since_checkpoint = 0
        self._last_checkpoint_ms = self.clock.now_ms()
        return keys

    def _live_replay(self, desc: CollectionDescriptor) -> Dict[str, int]:
        needed: Dict[str, int] = {}
        for shard, channel in enumerate(desc.channels):
            manifest = EntitySegmentMap.load(self.store, desc.collection_id, shard)
            needed[channel] = min(self.data_coord.replay_offset(channel), manifest.wal_offset)
        return needed

    def gc(self, name: str, expiration_ms: Optional[float] = None) -> GcReport:
        desc = self.collection(name)
        expiration = self.config.checkpoint.expiration_ms if expiration_ms is None else expiration_ms
        return gc_expired(
            self.store,
            self.meta,
            self.broker,
            desc,
            self.tso.allocate(),
            expiration,
            self.data_coord.segments(desc.collection_id),
            self._live_replay(desc),
            self.data_coord.forget_segment,
        )

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------

    def stats(self, name: Optional[str] = None) -> Dict[str, Any]:
        collections = [self.collection(name)] if name else self.list_collections()
        out: Dict[str, Any] = {
            "now": self.clock.now_ms(),
            "nodes": {
                "loggers": sorted(self.loggers.loggers),
                "data": sorted(self.data_nodes),
                "index": sorted(self.index_coord.nodes),
                "query": {n: q.describe() for n, q in self.alive_query_nodes().items()},
            },
            "collections": {},
        }
        for desc in collections:
            segments = self.data_coord.segments(desc.collection_id)
            live_sealed = [s for s in segments if s.is_sealed and s.is_live]
            out["collections"][desc.name] = {
                "id": desc.collection_id,
                "shards": desc.shard_count,
                "index": (desc.index_params or {}).get("kind", "flat"),
                "growing_segments": sum(1 for s in segments if not s.is_sealed),
                "sealed_segments": len(live_sealed),
                "retired_segments": sum(1 for s in segments if not s.is_live),
                "sealed_rows": sum(s.row_count for s in live_sealed),
                "wal_entries": {ch: self.broker.end_offset(ch) for ch in desc.channels},
            }
        return out

    def close(self) -> None:
        self.ticks.stop()
        self.meta.compact()
        self.broker.close()
