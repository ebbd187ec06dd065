"""
Module: query.py

Role of this file
-----------------
Query coordinator: which query node serves what.

- Sealed segments are loaded on the query node with the fewest hosted rows
  (load_segment). A freshly sealed segment stays searchable in the growing
  buffer of its channel owner until the sealed copy is loaded somewhere;
  then the buffer is released (release_growing).
- Every WAL channel of a loaded collection has one owner among the query
  nodes: the owner keeps growing segments in memory. All nodes watch every
  channel for deletes and time-ticks.
- Node health comes from heartbeats in the metastore. A node that misses
  `heartbeat_misses` intervals is declared down: its segments are loaded
  elsewhere and its channels get new owners, which replay the WAL from the
  channel's replay offset.
- Rebalancing moves segments from the node with the most hosted rows to the
  one with the fewest until the max/min ratio is within the configured
  bound. The destination loads first; the source releases after.
- Autoscaling: the mean latency of the last searches is compared with the
  low/high band; the node count is halved or doubled through a provisioner.

Every change of the serving layout is announced with distribution_changed,
which the proxies use to know which segments and channels a search must
cover.

Who uses this file
------------------
- cluster.py pumps it, forwards latencies and node membership changes.
- nodes/query_node.py executes its load/release/watch commands.
- nodes/proxy.py consumes distribution_changed.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Deque, Dict, List, Optional, Protocol, Set, Tuple

from loguru import logger

from logvec.backbone.broker import LogBroker
from logvec.config import CoordinationSettings
from logvec.coordinators.data import DataCoordinator
from logvec.models import rules
from logvec.models.collection import CollectionDescriptor
from logvec.models.log_entry import EntryKind, LogEntry
from logvec.models.timestamps import Tso
from logvec.storage.metastore import MetaStore
from logvec.utils.clock import Clock
from logvec.utils.constants import COORD_CHANNEL, DDL_CHANNEL

Move = Tuple[int, str, str]


def heartbeat_key(node_id: str) -> str:
    return f"heartbeat/{node_id}"


class Provisioner(Protocol):
    def provision_query_node(self) -> str:
        ...

    def decommission_query_node(self, node_id: str) -> None:
        ...


# ---------------------------------------------------------------------------
# Rebalance planning
# ---------------------------------------------------------------------------

def plan_rebalance(hosted: Dict[str, Dict[int, int]], ratio: float = rules.REBALANCE_RATIO) -> List[Move]:
    """
    Greedy migration plan over {node: {segment: rows}}. Each move takes the
    segment of the most loaded node that best evens it with the least loaded
    node; stops once balanced or when no move narrows the gap.
    """
    state = {node: dict(segments) for node, segments in hosted.items()}
    moves: List[Move] = []
    limit = sum(len(s) for s in state.values())
    for _ in range(limit):
        totals = {node: sum(s.values()) for node, s in state.items()}
        if rules.is_balanced(totals, ratio):
            break
        src = max(totals, key=lambda n: (totals[n], n))
        dst = min(totals, key=lambda n: (totals[n], n))
        gap = totals[src] - totals[dst]
        candidates = [(abs(gap - 2 * rows), sid) for sid, rows in state[src].items() if 0 < rows < gap]
        if not candidates:
            break
        _, sid = min(candidates)
        state[dst][sid] = state[src].pop(sid)
        moves.append((sid, src, dst))
    return moves


@dataclass
class QueryNodeInfo:
    node_id: str
    joined_ms: int
    draining: bool = False


class QueryCoordinator:
    def __init__(
        self,
        meta: MetaStore,
        broker: LogBroker,
        tso: Tso,
        data_coord: DataCoordinator,
        clock: Clock,
        settings: Optional[CoordinationSettings] = None,
        provisioner: Optional[Provisioner] = None,
    ) -> None:
        self.meta = meta
        self.broker = broker
        self.tso = tso
        self.data_coord = data_coord
        self.clock = clock
        self.settings = settings or CoordinationSettings()
        self.provisioner = provisioner
        self.nodes: Dict[str, QueryNodeInfo] = {}
        self.collections: Dict[int, CollectionDescriptor] = {
            cid: d for cid, d in data_coord.collections.items()
        }
        # segment id -> nodes hosting its sealed copy
        self.hosts: Dict[int, Set[str]] = {}
        self.rows: Dict[int, int] = {}
        # segment id -> (target node, migrating from)
        self.pending: Dict[int, Tuple[str, Optional[str]]] = {}
        self.load_failures: Dict[int, int] = {}
        self.channel_owner: Dict[str, str] = {}
        self.latencies: Deque[float] = deque(maxlen=self.settings.autoscale_window)
        self.scale_events: List[Tuple[int, int, int]] = []
        self._ddl = broker.subscribe(DDL_CHANNEL, broker.end_offset(DDL_CHANNEL))
        self._coord = broker.subscribe(COORD_CHANNEL, broker.end_offset(COORD_CHANNEL))

    # ------------------------------------------------------------------
    # Messages out
    # ------------------------------------------------------------------

    def _publish(self, message: str, **fields) -> None:
        self.broker.publish_stamped(COORD_CHANNEL, self.tso, lambda ts: LogEntry.coord(ts, message, **fields))

    def _loaded_collections(self) -> List[CollectionDescriptor]:
        return [d for _, d in sorted(self.collections.items()) if d.loaded]

    def _serving_nodes(self) -> List[str]:
        return sorted(n for n, info in self.nodes.items() if not info.draining)

    def _sealed_ids(self, collection_id: int) -> List[int]:
        return [d.segment_id for d in self.data_coord.segments(collection_id) if d.is_sealed]

    def _replay_from(self, channel: str) -> int:
        return max(self.data_coord.replay_offset(channel), self.broker.base_offset(channel))

    def _watch(self, desc: CollectionDescriptor, channel: str, node: str) -> None:
        self._publish(
            "watch_channel",
            role="query",
            collection=desc.collection_id,
            channel=channel,
            node=node,
            from_offset=self._replay_from(channel),
            owner=self.channel_owner.get(channel),
            skip=self._sealed_ids(desc.collection_id),
        )

    def publish_distribution(self, collection_id: int) -> None:
        """
        Segments a search of the collection must cover, with their hosts: live
        sealed segments, except merge outputs whose parents are still served
        (the parents are listed instead).
        """
        segments: Dict[str, List[str]] = {}
        descs = self.data_coord.segments(collection_id)
        by_id = {d.segment_id: d for d in descs}
        for d in descs:
            if not d.is_sealed:
                continue
            hosts = sorted(self.hosts.get(d.segment_id, ()))
            if d.is_live:
                parents_served = any(self.hosts.get(p) for p in d.parents)
                if hosts or not parents_served:
                    segments[str(d.segment_id)] = hosts
            elif hosts:
                successor = by_id.get(d.successor) if d.successor is not None else None
                if successor is None or not self.hosts.get(successor.segment_id):
                    segments[str(d.segment_id)] = hosts
        desc = self.collections.get(collection_id)
        channels = {} if desc is None else {ch: self.channel_owner.get(ch) for ch in desc.channels}
        self._publish(
            "distribution_changed",
            collection=collection_id,
            segments=segments,
            nodes=sorted(self.nodes),
            channels=channels,
        )

    def _publish_all_distributions(self) -> None:
        for desc in self._loaded_collections():
            self.publish_distribution(desc.collection_id)

    # ------------------------------------------------------------------
    # Loads
    # ------------------------------------------------------------------

    def hosted_rows(self) -> Dict[str, int]:
        totals = {n: 0 for n in self.nodes}
        for sid, hosts in self.hosts.items():
            for n in hosts:
                if n in totals:
                    totals[n] += self.rows.get(sid, 0)
        for sid, (node, _) in self.pending.items():
            if node in totals:
                totals[node] += self.rows.get(sid, 0)
        return totals

    def hosted_segments(self) -> Dict[str, Dict[int, int]]:
        out: Dict[str, Dict[int, int]] = {n: {} for n in self.nodes}
        for sid, hosts in self.hosts.items():
            for n in hosts:
                if n in out:
                    out[n][sid] = self.rows.get(sid, 0)
        return out

    def _least_loaded(self, exclude: Set[str] = frozenset()) -> Optional[str]:
        totals = self.hosted_rows()
        candidates = [n for n in self._serving_nodes() if n not in exclude]
        if not candidates:
            return None
        return min(candidates, key=lambda n: (totals[n], n))

    def _load(self, collection_id: int, segment_id: int, node: str, migrate_from: Optional[str] = None) -> None:
        desc = self.data_coord.require(segment_id)
        self.rows[segment_id] = desc.row_count
        self.pending[segment_id] = (node, migrate_from)
        self._publish(
            "load_segment",
            collection=collection_id,
            node=node,
            segment=desc.to_dict(),
            migrate_from=migrate_from,
        )

    def _assign_unhosted(self) -> int:
        assigned = 0
        for desc in self._loaded_collections():
            for seg in self.data_coord.live_sealed(desc.collection_id):
                sid = seg.segment_id
                if self.hosts.get(sid) or sid in self.pending:
                    continue
                node = self._least_loaded()
                if node is None:
                    return assigned
                self._load(desc.collection_id, sid, node)
                assigned += 1
        return assigned

    def _assign_channels(self, desc: CollectionDescriptor) -> None:
        for channel in desc.channels:
            if self.channel_owner.get(channel) in self.nodes and not self.nodes[self.channel_owner[channel]].draining:
                continue
            owned = {n: 0 for n in self._serving_nodes()}
            for owner in self.channel_owner.values():
                if owner in owned:
                    owned[owner] += 1
            if not owned:
                return
            new_owner = min(owned, key=lambda n: (owned[n], n))
            self.channel_owner[channel] = new_owner
            for node in sorted(self.nodes):
                self._watch(desc, channel, node)

    def load_collection(self, desc: CollectionDescriptor) -> None:
        desc.loaded = True
        self.collections[desc.collection_id] = desc
        self._assign_channels(desc)
        self._assign_unhosted()
        self.publish_distribution(desc.collection_id)

    def _release_collection(self, collection_id: int) -> None:
        desc = self.collections.get(collection_id)
        if desc is None:
            return
        desc.loaded = False
        self._publish("release_collection", collection=collection_id)
        for channel in desc.channels:
            self.channel_owner.pop(channel, None)
        ids = {d.segment_id for d in self.data_coord.segments(collection_id)}
        for sid in list(self.hosts):
            if sid in ids:
                del self.hosts[sid]
        for sid in list(self.pending):
            if sid in ids:
                del self.pending[sid]

    # ------------------------------------------------------------------
    # Messages in
    # ------------------------------------------------------------------

    def _on_segment_loaded(self, payload: Dict) -> None:
        sid, node, cid = int(payload["segment"]), str(payload["node"]), int(payload["collection"])
        self.pending.pop(sid, None)
        self.load_failures.pop(sid, None)
        if node not in self.nodes or cid not in self.collections or not self.collections[cid].loaded:
            self._publish("release_segment", collection=cid, node=node, segment=sid)
            return
        self.rows[sid] = int(payload.get("rows", self.rows.get(sid, 0)))
        self.hosts.setdefault(sid, set()).add(node)
        source = payload.get("migrate_from")
        if source and source != node:
            self.hosts[sid].discard(source)
            self._publish("release_segment", collection=cid, node=source, segment=sid)
        desc = self.data_coord.get(sid)
        if desc is not None:
            self._publish("release_growing", collection=cid, segment=sid, channel=desc.channel)
            for parent in desc.parents:
                for host in sorted(self.hosts.pop(parent, set())):
                    self._publish("release_segment", collection=cid, node=host, segment=parent)
        self.publish_distribution(cid)

    def _on_load_failed(self, payload: Dict) -> None:
        sid, node, cid = int(payload["segment"]), str(payload["node"]), int(payload["collection"])
        self.pending.pop(sid, None)
        failures = self.load_failures.get(sid, 0) + 1
        self.load_failures[sid] = failures
        if failures >= self.settings.index_task_retries:
            logger.error(f"segment {sid} could not be loaded after {failures} attempts")
            return
        target = self._least_loaded(exclude={node})
        if target is not None and self.data_coord.get(sid) is not None:
            self._load(cid, sid, target)

    def _on_index_built(self, payload: Dict) -> None:
        sid = int(payload["segment"])
        for host in sorted(self.hosts.get(sid, ())):
            self._publish(
                "load_index",
                collection=int(payload["collection"]),
                node=host,
                segment=sid,
                field=payload["field"],
                path=payload["path"],
            )

    def pump(self) -> int:
        handled = 0
        for _, entry in self._ddl.poll():
            handled += 1
            if entry.message_type == "create_collection":
                desc = CollectionDescriptor.from_dict(entry.payload["collection"])
                self.collections[desc.collection_id] = desc
                if desc.loaded:
                    self.load_collection(desc)
            elif entry.message_type == "drop_collection":
                cid = int(entry.payload["collection_id"])
                self._release_collection(cid)
                self.collections.pop(cid, None)
            elif entry.message_type == "create_index":
                cid = int(entry.payload["collection_id"])
                if cid in self.collections:
                    self.collections[cid].index_params = entry.payload["params"]
        for _, entry in self._coord.poll():
            handled += 1
            if entry.kind is not EntryKind.COORD:
                continue
            message = entry.message_type
            if message == "segment_loaded":
                self._on_segment_loaded(entry.payload)
            elif message == "load_failed":
                self._on_load_failed(entry.payload)
            elif message == "index_built":
                self._on_index_built(entry.payload)
            elif message == "load_collection":
                cid = int(entry.payload["collection"])
                if cid in self.collections and not self.collections[cid].loaded:
                    self.load_collection(self.collections[cid])
            elif message == "release_collection" and "node" not in entry.payload:
                cid = int(entry.payload["collection"])
                if cid in self.collections and self.collections[cid].loaded:
                    self._release_collection(cid)
        self.check_health()
        if self._assign_unhosted():
            handled += 1
        self.rebalance()
        self.autoscale()
        self._finish_drains()
        return handled

    # ------------------------------------------------------------------
    # Membership and health
    # ------------------------------------------------------------------

    def register_node(self, node_id: str) -> None:
        now = self.clock.now_ms()
        self.nodes[node_id] = QueryNodeInfo(node_id, now)
        self.meta.put(heartbeat_key(node_id), {"ms": now})
        for desc in self._loaded_collections():
            for channel in desc.channels:
                if channel in self.channel_owner:
                    self._watch(desc, channel, node_id)
            self._assign_channels(desc)
        self._assign_unhosted()
        self._publish_all_distributions()
        logger.info(f"query node {node_id} registered ({len(self.nodes)} nodes)")

    def recover_node(self, node_id: str, reason: str = "down") -> None:
        """Move everything a lost node served to the healthy ones."""
        if self.nodes.pop(node_id, None) is None:
            return
        for hosts in self.hosts.values():
            hosts.discard(node_id)
        for sid, (target, _) in list(self.pending.items()):
            if target == node_id:
                del self.pending[sid]
        self._publish("node_down", node=node_id, reason=reason)
        for desc in self._loaded_collections():
            for channel in desc.channels:
                if self.channel_owner.get(channel) == node_id:
                    del self.channel_owner[channel]
            self._assign_channels(desc)
        self._assign_unhosted()
        self._publish_all_distributions()
        logger.warning(f"query node {node_id} {reason}; its segments and channels were reassigned")

    def node_restarted(self, node_id: str) -> None:
        if node_id in self.nodes:
            self.recover_node(node_id, reason="restarted")
        self.register_node(node_id)

    def check_health(self) -> List[str]:
        now = self.clock.now_ms()
        deadline = self.settings.heartbeat_interval_ms * self.settings.heartbeat_misses
        dead = []
        for node_id in sorted(self.nodes):
            record = self.meta.get(heartbeat_key(node_id)) or {}
            last = int(record.get("ms", self.nodes[node_id].joined_ms))
            if now - last > deadline:
                dead.append(node_id)
        for node_id in dead:
            self.recover_node(node_id)
        return dead

    # ------------------------------------------------------------------
    # Balancing and scaling
    # ------------------------------------------------------------------

    def rebalance(self) -> List[Move]:
        if self.pending or len(self._serving_nodes()) < 2:
            return []
        hosted = {n: s for n, s in self.hosted_segments().items() if not self.nodes[n].draining}
        moves = plan_rebalance(hosted, self.settings.rebalance_ratio)
        for sid, src, dst in moves:
            desc = self.data_coord.get(sid)
            if desc is not None:
                self._load(desc.collection_id, sid, dst, migrate_from=src)
        if moves:
            logger.info(f"rebalancing: {len(moves)} segment moves")
        return moves

    def observe_latency(self, latency_ms: float) -> None:
        self.latencies.append(float(latency_ms))

    def autoscale(self) -> int:
        """Returns the change in node count that was started (0 if none)."""
        if not self.settings.autoscale or self.provisioner is None:
            return 0
        if len(self.latencies) < self.settings.autoscale_window:
            return 0
        mean = sum(self.latencies) / len(self.latencies)
        self.latencies.clear()
        current = len(self._serving_nodes())
        target = rules.autoscale_target(
            mean,
            current,
            self.settings.autoscale_low_ms,
            self.settings.autoscale_high_ms,
            self.settings.autoscale_max_nodes,
        )
        if target == current:
            return 0
        self.scale_events.append((self.clock.now_ms(), current, target))
        logger.info(f"autoscale: mean latency {mean:.1f} ms, {current} -> {target} query nodes")
        if target > current:
            for _ in range(target - current):
                self.provisioner.provision_query_node()
        else:
            for node_id in sorted(self._serving_nodes(), reverse=True)[: current - target]:
                self.drain(node_id)
        return target - current

    def drain(self, node_id: str) -> None:
        """Move a node's segments and channels away; it is decommissioned once empty."""
        info = self.nodes.get(node_id)
        if info is None or info.draining:
            return
        info.draining = True
        for sid, rows in sorted(self.hosted_segments().get(node_id, {}).items()):
            target = self._least_loaded(exclude={node_id})
            desc = self.data_coord.get(sid)
            if target is None or desc is None:
                continue
            self._load(desc.collection_id, sid, target, migrate_from=node_id)
        for desc in self._loaded_collections():
            self._assign_channels(desc)

    def _finish_drains(self) -> None:
        for node_id, info in sorted(self.nodes.items()):
            if not info.draining:
                continue
            busy = any(node_id in hosts for hosts in self.hosts.values())
            busy = busy or any(src == node_id for _, src in self.pending.values())
            busy = busy or node_id in self.channel_owner.values()
            if busy:
                continue
            del self.nodes[node_id]
            self._publish("node_removed", node=node_id)
            self._publish_all_distributions()
            if self.provisioner is not None:
                self.provisioner.decommission_query_node(node_id)
            logger.info(f"query node {node_id} drained and removed")
