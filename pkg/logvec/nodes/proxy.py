"""
Module: proxy.py

Role of this file
-----------------
Proxies are the entry point of searches and queries.

A proxy
- checks the request (collection exists, vector dimension, filter syntax
  and types) before anything is sent to a query node;
- takes the request's issue timestamp from the TSO;
- sends it to every query node of the collection's distribution and merges
  the node-wise results (dedup by primary key, so a segment served twice
  during a migration is not counted twice);
- retries while a node waits on its consistency guard or while the answers
  do not cover every segment and channel of the distribution, and gives up
  with PartialResultError after the node timeout.

Searches with a travel timestamp are answered from a time-travel snapshot.

The distribution (which segments must be covered, who hosts them, who owns
each channel) comes from distribution_changed messages of the query
coordinator.

Who uses this file
------------------
- cluster.py forwards search/query requests.
- sim/workload.py uses search_many for batched workloads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Set, Tuple

import numpy as np
from loguru import logger

from logvec.algorithms.filtering import compile_filter
from logvec.algorithms.topk import merge_hits
from logvec.backbone.broker import LogBroker
from logvec.config import ConsistencySettings
from logvec.coordinators.root import RootCoordinator
from logvec.models.collection import CollectionDescriptor
from logvec.models.errors import DimensionMismatchError, PartialResultError, UnavailableError
from logvec.models.schema import PrimaryKey
from logvec.models.search import Hit, PartialResult, SearchRequest, SearchResult
from logvec.models.timestamps import HlcTimestamp, Tso
from logvec.nodes.query_node import QueryNode
from logvec.utils.clock import Clock
from logvec.utils.constants import COORD_CHANNEL


@dataclass
class Distribution:
    segments: Dict[int, List[str]] = field(default_factory=dict)
    nodes: List[str] = field(default_factory=list)
    channels: Dict[str, Optional[str]] = field(default_factory=dict)

    @classmethod
    def from_payload(cls, payload: Dict) -> "Distribution":
        return cls(
            segments={int(k): list(v) for k, v in payload.get("segments", {}).items()},
            nodes=list(payload.get("nodes", [])),
            channels=dict(payload.get("channels", {})),
        )


def batch_requests(requests: List[SearchRequest]) -> List[List[int]]:
    """Indices of requests that can be served by one stacked search, in first-seen order."""
    groups: Dict[tuple, List[int]] = {}
    for i, r in enumerate(requests):
        if r.travel_ts is not None:
            groups[("single", i)] = [i]
            continue
        key = (*r.batch_key, r.k, r.filter, r.tau_ms, r.vector_field)
        groups.setdefault(key, []).append(i)
    return list(groups.values())


NodeRegistry = Callable[[], Dict[str, QueryNode]]
SnapshotProvider = Callable[[CollectionDescriptor, HlcTimestamp], object]


class Proxy:
    def __init__(
        self,
        proxy_id: str,
        broker: LogBroker,
        tso: Tso,
        root: RootCoordinator,
        clock: Clock,
        nodes: NodeRegistry,
        wait_step: Callable[[int], None],
        settings: Optional[ConsistencySettings] = None,
        snapshots: Optional[SnapshotProvider] = None,
        node_timeout_ms: Optional[int] = None,
    ) -> None:
        self.proxy_id = proxy_id
        self.broker = broker
        self.tso = tso
        self.root = root
        self.clock = clock
        self.nodes = nodes
        self.wait_step = wait_step
        self.settings = settings or ConsistencySettings()
        self.snapshots = snapshots
        self.node_timeout_ms = node_timeout_ms or self.settings.node_timeout_ms
        self.distributions: Dict[int, Distribution] = {}
        self.on_result: Optional[Callable[[SearchResult], None]] = None
        self._coord = broker.subscribe(COORD_CHANNEL, broker.end_offset(COORD_CHANNEL))

    def refresh(self) -> int:
        batch = self._coord.poll()
        for _, entry in batch:
            message = entry.message_type
            if message == "distribution_changed":
                self.distributions[int(entry.payload["collection"])] = Distribution.from_payload(entry.payload)
            elif message == "release_collection" and "node" not in entry.payload:
                self.distributions.pop(int(entry.payload["collection"]), None)
        return len(batch)

    # ------------------------------------------------------------------
    # Verification
    # ------------------------------------------------------------------

    def verify(self, request: SearchRequest) -> CollectionDescriptor:
        desc = self.root.get_collection(request.collection)
        field_def = desc.schema.vector_field(request.vector_field)
        if request.vectors.shape[1] != field_def.dim:
            raise DimensionMismatchError(
                f"field {field_def.name!r} has dimension {field_def.dim}, query has {request.vectors.shape[1]}"
            )
        compile_filter(request.filter, desc.schema)
        return desc

    # ------------------------------------------------------------------
    # Fan-out with retries
    # ------------------------------------------------------------------

    def _gather(
        self, desc: CollectionDescriptor, ask: Callable[[QueryNode, HlcTimestamp], Optional[PartialResult]]
    ) -> Tuple[List[PartialResult], HlcTimestamp, float]:
        issue_ts = self.tso.allocate()
        start = self.clock.now_ms()
        cid = desc.collection_id
        while True:
            self.refresh()
            alive = self.nodes()
            dist = self.distributions.get(cid)
            if not alive:
                raise UnavailableError(f"no query node serves collection {desc.name!r}")
            partials: List[PartialResult] = []
            waiting: List[str] = []
            missing: Set[str] = set()
            if dist is not None:
                for node_id in sorted(n for n in dist.nodes if n in alive):
                    result = ask(alive[node_id], issue_ts)
                    if result is None:
                        waiting.append(node_id)
                    else:
                        partials.append(result)
                covered = {sid for p in partials for sid in p.segments}
                owned = {ch for p in partials for ch in p.channels}
                for sid, hosts in dist.segments.items():
                    if sid not in covered:
                        missing.update(hosts or {f"segment-{sid}"})
                for channel, owner in dist.channels.items():
                    if channel not in owned:
                        missing.add(owner or f"channel-{channel}")
            else:
                missing.add(f"collection-{cid}")
            if not waiting and not missing:
                return partials, issue_ts, float(self.clock.now_ms() - start)
            if self.clock.now_ms() - start >= self.node_timeout_ms:
                raise PartialResultError(
                    f"search on {desc.name!r} did not complete within {self.node_timeout_ms} ms",
                    sorted({*waiting, *missing}),
                )
            self.wait_step(self.settings.wait_step_ms)

    def search(self, request: SearchRequest) -> SearchResult:
        desc = self.verify(request)
        if request.travel_ts is not None:
            if self.snapshots is None:
                raise UnavailableError("time travel is not configured")
            return self.snapshots(desc, request.travel_ts).search(request)

        partials, issue_ts, waited = self._gather(
            desc, lambda node, ts: node.search_local(desc.collection_id, request, ts)
        )
        result = SearchResult(
            hits=merge_partials(partials, request),
            waited_ms=waited,
            issue_ts=issue_ts,
            nodes=[p.source for p in partials],
            rows_scanned={p.source: p.rows_scanned for p in partials},
        )
        if waited:
            logger.debug(f"proxy {self.proxy_id}: search on {desc.name!r} waited {waited:.0f} ms")
        if self.on_result is not None:
            self.on_result(result)
        return result

    def search_many(self, requests: List[SearchRequest], batching: bool = True) -> List[SearchResult]:
        """Serve several requests; compatible ones share one stacked search when batching."""
        if not batching:
            return [self.search(r) for r in requests]
        results: List[Optional[SearchResult]] = [None] * len(requests)
        for group in batch_requests(requests):
            first = requests[group[0]]
            if len(group) == 1:
                results[group[0]] = self.search(first)
                continue
            stacked = SearchRequest(
                collection=first.collection,
                vectors=np.concatenate([requests[i].vectors for i in group]),
                k=first.k,
                metric=first.metric,
                tau_ms=first.tau_ms,
                filter=first.filter,
                vector_field=first.vector_field,
            )
            combined = self.search(stacked)
            pos = 0
            for i in group:
                nq = requests[i].nq
                results[i] = SearchResult(
                    hits=combined.hits[pos:pos + nq],
                    waited_ms=combined.waited_ms,
                    issue_ts=combined.issue_ts,
                    nodes=combined.nodes,
                    rows_scanned=combined.rows_scanned,
                )
                pos += nq
        return [r for r in results if r is not None]

    def query(
        self,
        collection: str,
        filter_text: Optional[str] = None,
        tau_ms: float = 0.0,
        travel_ts: Optional[HlcTimestamp] = None,
    ) -> List[PrimaryKey]:
        """Primary keys of every live entity matching the filter, sorted."""
        desc = self.root.get_collection(collection)
        compile_filter(filter_text, desc.schema)
        if travel_ts is not None:
            if self.snapshots is None:
                raise UnavailableError("time travel is not configured")
            return self.snapshots(desc, travel_ts).query(filter_text)
        partials, _, _ = self._gather(
            desc, lambda node, ts: node.query_local(desc.collection_id, filter_text, ts, tau_ms)
        )
        pks: Set[PrimaryKey] = {h.pk for p in partials for h in p.hits[0]}
        return sorted(pks, key=lambda pk: (isinstance(pk, str), pk))


def merge_partials(partials: List[PartialResult], request: SearchRequest) -> List[List[Hit]]:
    return [merge_hits([p.hits[i] for p in partials], request.metric, request.k) for i in range(request.nq)]
