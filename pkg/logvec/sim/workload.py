"""
Module: workload.py

Role of this file
-----------------
Benchmark harness: runs a mixed insert/search workload against a Cluster and
scores it against an exact oracle.

A run
    1. builds the cluster from the WorkloadSpec (node counts, index, ticks);
    2. loads the initial rows, seals them and waits for indexes and loads;
    3. optionally deletes a fraction of the rows;
    4. replays a seeded event schedule (insert batches, search requests, an
       optional query node crash) through sim/events.EventQueue;
    5. scores every answer against brute-force top-k over the rows
       acknowledged before the request was issued.

With the virtual clock, search latency comes from a cost model: each query
node serves requests one at a time and spends
query_base_ms + rows_scanned * query_ms_per_row on each. A run is then a pure
function of (spec, seed) and its trace is reproducible byte for byte.

Who uses this file
------------------
- cli/main.py `workload run`.
- tests (scaling, failure recovery and determinism runs).
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from logvec.algorithms.bucket_index import BucketIndex
from logvec.algorithms.flat import exact_search
from logvec.algorithms.segment_index import IndexParams
from logvec.cluster import Cluster
from logvec.config import EngineConfig, IndexSettings
from logvec.models import rules
from logvec.models.errors import DatasetError, PartialResultError, UnavailableError
from logvec.models.schema import Entity, PrimaryKey, Schema
from logvec.models.search import SearchResult
from logvec.sim.datasets import queries_near, read_vectors, synthetic
from logvec.sim.events import EventQueue, SimEvent
from logvec.storage.object_store import ObjectStore
from logvec.utils.clock import SystemClock, VirtualClock
from logvec.utils.vector_math import Metric

NEVER = np.iinfo(np.int64).max


# ---------------------------------------------------------------------------
# Spec
# ---------------------------------------------------------------------------

class WorkloadSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    collection: str = "bench"
    # "uniform", "clustered" or the path of an .fvecs / .csv file
    dataset: str = "uniform"
    dim: int = Field(32, ge=1)
    initial_rows: int = Field(2000, ge=0)
    insert_rate: float = Field(0.0, ge=0)
    insert_batch: int = Field(100, ge=1)
    query_rate: float = Field(50.0, gt=0)
    batch: int = Field(1, ge=1)
    duration_ms: int = Field(2000, gt=0)
    k: int = Field(50, ge=1)
    metric: str = "l2"
    tau_ms: float = Field(math.inf, ge=0)
    delete_fraction: float = Field(0.0, ge=0, lt=1)
    shards: int = Field(2, ge=1)
    seal_rows: int = Field(500, ge=1)
    query_nodes: int = Field(1, ge=1)
    data_nodes: int = Field(1, ge=1)
    index_nodes: int = Field(1, ge=0)
    index: IndexSettings = Field(default_factory=IndexSettings)
    autoscale: bool = False
    kill_query_node_at_ms: Optional[int] = Field(None, ge=0)
    tick_interval_ms: int = Field(rules.TICK_INTERVAL_VIRTUAL_MS, gt=0)
    seed: int = 42
    clock: Literal["virtual", "wall"] = "virtual"

    @field_validator("metric")
    @classmethod
    def _known_metric(cls, value: str) -> str:
        return Metric.parse(value).value

    @model_validator(mode="after")
    def _has_data(self) -> "WorkloadSpec":
        if self.initial_rows == 0 and self.insert_rate == 0:
            raise ValueError("workload has neither initial rows nor inserts")
        if self.kill_query_node_at_ms is not None and self.kill_query_node_at_ms > self.duration_ms:
            raise ValueError("kill time lies after the end of the workload")
        return self

    @property
    def total_rows(self) -> int:
        return self.initial_rows + int(self.insert_rate * self.duration_ms / 1000.0)

    @property
    def request_count(self) -> int:
        return max(1, int(self.query_rate * self.duration_ms / 1000.0))

    def engine_config(self, base: Optional[EngineConfig] = None) -> EngineConfig:
        config = (base or EngineConfig()).model_copy(deep=True)
        config.segments.seal_rows = self.seal_rows
        config.log.tick_interval_ms = self.tick_interval_ms
        config.index = self.index.model_copy()
        config.nodes.query_nodes = self.query_nodes
        config.nodes.data_nodes = self.data_nodes
        config.nodes.index_nodes = self.index_nodes
        config.nodes.default_shards = self.shards
        config.nodes.batching = self.batch > 1
        config.coordination.autoscale = self.autoscale
        config.consistency.default_tau_ms = self.tau_ms
        return config


# ---------------------------------------------------------------------------
# Recall
# ---------------------------------------------------------------------------

@dataclass
class RecallReport:
    k: int
    recalls: List[float] = field(default_factory=list)
    latencies_ms: List[float] = field(default_factory=list)
    waited_ms: List[float] = field(default_factory=list)
    throughput_qps: float = 0.0
    errors: int = 0
    bytes_read: int = 0

    @property
    def queries(self) -> int:
        return len(self.recalls)

    @property
    def mean_recall(self) -> float:
        return float(np.mean(self.recalls)) if self.recalls else 0.0

    def latency_percentile(self, p: float) -> float:
        return float(np.percentile(self.latencies_ms, p)) if self.latencies_ms else 0.0

    @property
    def mean_wait_ms(self) -> float:
        return float(np.mean(self.waited_ms)) if self.waited_ms else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "k": self.k,
            "queries": self.queries,
            "errors": self.errors,
            "mean_recall": round(self.mean_recall, 6),
            "p50_ms": round(self.latency_percentile(50), 3),
            "p95_ms": round(self.latency_percentile(95), 3),
            "p99_ms": round(self.latency_percentile(99), 3),
            "mean_wait_ms": round(self.mean_wait_ms, 3),
            "throughput_qps": round(self.throughput_qps, 3),
            "bytes_read": self.bytes_read,
        }

    def to_table(self) -> str:
        rows = [(key, str(value)) for key, value in self.to_dict().items()]
        width = max(len(key) for key, _ in rows)
        return "\n".join(f"{key.ljust(width)}  {value}" for key, value in rows)


def recall_at_k(found: Sequence[PrimaryKey], oracle: Sequence[PrimaryKey], k: int) -> float:
    expected = list(oracle)[:k]
    if not expected:
        return 1.0 if not found else 0.0
    return len(set(list(found)[:k]) & set(expected)) / min(k, len(expected))


def eval_recall(
    results: Sequence[Sequence[PrimaryKey]],
    oracle: Sequence[Sequence[PrimaryKey]],
    k: int,
) -> RecallReport:
    if len(results) != len(oracle):
        raise ValueError(f"{len(results)} results for {len(oracle)} oracle answers")
    return RecallReport(k=k, recalls=[recall_at_k(r, o, k) for r, o in zip(results, oracle)])


def brute_force_topk(
    vectors: np.ndarray,
    query: np.ndarray,
    metric: str | Metric,
    k: int,
    row_ids: Optional[np.ndarray] = None,
) -> List[int]:
    """Exact top-k row ids, ties broken by the smaller row id."""
    data = np.asarray(vectors, dtype=np.float32)
    ids, _ = exact_search(data, np.asarray(query, dtype=np.float32), Metric.parse(metric), k, row_ids=row_ids)
    return [int(i) for i in ids]


def coverage_gaps(cluster: Cluster, collection: str) -> List[int]:
    """Live sealed segments that no query node hosts, loads, or covers through its parents."""
    desc = cluster.collection(collection)
    if not desc.loaded:
        return []
    coord = cluster.query_coord
    gaps = []
    for seg in cluster.data_coord.live_sealed(desc.collection_id):
        if coord.hosts.get(seg.segment_id) or seg.segment_id in coord.pending:
            continue
        if seg.parents and all(coord.hosts.get(p) for p in seg.parents):
            continue
        gaps.append(seg.segment_id)
    return gaps


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------

def _dataset(spec: WorkloadSpec) -> np.ndarray:
    if spec.dataset in ("uniform", "clustered"):
        return synthetic(spec.dataset, spec.total_rows, spec.dim, spec.seed)
    data = read_vectors(spec.dataset)
    if data.shape[0] < spec.total_rows:
        raise DatasetError(f"{spec.dataset} holds {data.shape[0]} rows, the workload needs {spec.total_rows}")
    if data.shape[1] != spec.dim:
        raise DatasetError(f"{spec.dataset} has dimension {data.shape[1]}, the workload says {spec.dim}")
    return data[: spec.total_rows]


class WorkloadRun:
    def __init__(self, spec: WorkloadSpec, cluster: Cluster) -> None:
        self.spec = spec
        self.cluster = cluster
        self.virtual = isinstance(cluster.clock, VirtualClock)
        self.data = _dataset(spec)
        n = self.data.shape[0]
        self.lsn = np.full(n, -1, dtype=np.int64)
        self.deleted = np.full(n, NEVER, dtype=np.int64)
        self.next_row = 0
        self.rng = np.random.default_rng(spec.seed)
        pool = self.data[: spec.initial_rows] if spec.initial_rows else self.data
        self.queries = queries_near(pool, spec.request_count * spec.batch, seed=spec.seed + 1)
        self.trace: List[Dict[str, Any]] = []
        self.report = RecallReport(k=spec.k)
        self.busy_until: Dict[str, float] = {}
        self.start_ms = 0
        self.first_arrival: Optional[float] = None
        self.last_finish = 0.0

    # -- writes ---------------------------------------------------------

    def _insert(self, count: int) -> int:
        begin = self.next_row
        end = min(begin + count, self.data.shape[0])
        if end <= begin:
            return 0
        entities = [Entity(pk=row, vectors={"vec": self.data[row]}) for row in range(begin, end)]
        for logged in self.cluster.insert(self.spec.collection, entities):
            self.lsn[int(logged.pk)] = logged.lsn.encode()
        self.next_row = end
        return end - begin

    def _delete_fraction(self) -> None:
        live = np.flatnonzero(self.lsn >= 0)
        count = int(len(live) * self.spec.delete_fraction)
        if count == 0:
            return
        victims = sorted(int(pk) for pk in self.rng.choice(live, size=count, replace=False))
        for pk, ts in zip(victims, self.cluster.delete(self.spec.collection, victims)):
            self.deleted[pk] = ts.encode()
        self.trace.append({"t": 0, "event": "delete", "rows": count})

    # -- setup ----------------------------------------------------------

    def prepare(self) -> None:
        spec = self.spec
        params = IndexParams.from_settings(spec.index, spec.metric)
        self.cluster.create_collection(spec.collection, Schema(vector_fields=[("vec", spec.dim)]), spec.shards, params)
        loaded = 0
        while loaded < spec.initial_rows:
            loaded += self._insert(min(1000, spec.initial_rows - loaded))
            self.cluster.pump()
        self.cluster.seal(spec.collection)
        self.cluster.settle()
        self._delete_fraction()
        self.cluster.settle()
        self.start_ms = self.cluster.clock.now_ms()
        logger.info(f"workload prepared: {loaded} rows in {spec.collection!r}")

    def schedule(self) -> EventQueue:
        spec = self.spec
        queue = EventQueue()
        if spec.insert_rate > 0:
            interval = spec.insert_batch * 1000.0 / spec.insert_rate
            remaining = spec.total_rows - spec.initial_rows
            t = interval
            while remaining > 0 and t <= spec.duration_ms:
                queue.schedule(self.start_ms + int(t), "insert", rows=min(spec.insert_batch, remaining))
                remaining -= spec.insert_batch
                t += interval
        arrivals = np.cumsum(self.rng.exponential(1000.0 / spec.query_rate, size=spec.request_count))
        for i, at in enumerate(arrivals):
            queue.schedule(self.start_ms + int(at), "search", first=i * spec.batch)
        if spec.kill_query_node_at_ms is not None:
            queue.schedule(self.start_ms + spec.kill_query_node_at_ms, "kill")
        return queue

    # -- driving --------------------------------------------------------

    def _advance_to(self, at_ms: int) -> None:
        step = self.spec.tick_interval_ms
        while self.cluster.clock.now_ms() < at_ms:
            if self.virtual:
                self.cluster.step(min(step, at_ms - self.cluster.clock.now_ms()))
            else:
                time.sleep(min(step, at_ms - self.cluster.clock.now_ms()) / 1000.0)
                self.cluster.pump()

    def _oracle(self, query: np.ndarray, issue: int) -> List[int]:
        visible = np.flatnonzero((self.lsn >= 0) & (self.lsn < issue) & (self.deleted >= issue))
        return brute_force_topk(self.data, query, self.spec.metric, self.spec.k, row_ids=visible)

    def _cost(self, arrival: float, results: List[SearchResult]) -> float:
        """Virtual finish time of a group of results under the per-node cost model."""
        cost = self.cluster.config.cost
        finish = arrival
        seen = set()
        for result in results:
            stamp = None if result.issue_ts is None else result.issue_ts.encode()
            if stamp in seen:
                continue
            seen.add(stamp)
            for node, rows in sorted(result.rows_scanned.items()):
                start = max(arrival + result.waited_ms, self.busy_until.get(node, 0.0))
                done = start + cost.query_base_ms + rows * cost.query_ms_per_row
                self.busy_until[node] = done
                finish = max(finish, done)
        return finish

    def _search(self, event: SimEvent) -> None:
        spec = self.spec
        first = int(event.payload["first"])
        vectors = self.queries[first:first + spec.batch]
        requests = [
            self.cluster.make_request(spec.collection, q, spec.k, metric=spec.metric, tau_ms=spec.tau_ms)
            for q in vectors
        ]
        arrival = float(event.at_ms)
        wall_start = time.perf_counter()
        rel = event.at_ms - self.start_ms
        try:
            results = self.cluster.search_many(requests)
        except (PartialResultError, UnavailableError) as e:
            self.report.errors += len(requests)
            self.trace.append({
                "t": rel,
                "event": "error",
                "error": type(e).__name__,
                "missing": list(getattr(e, "missing_nodes", [])),
            })
            return
        if self.virtual:
            finish = self._cost(arrival, results)
            latency = finish - arrival
        else:
            latency = (time.perf_counter() - wall_start) * 1000.0
            finish = arrival + latency
        self.first_arrival = arrival if self.first_arrival is None else self.first_arrival
        self.last_finish = max(self.last_finish, finish)

        recalls = []
        for query, result in zip(vectors, results):
            oracle = self._oracle(query, result.issue_ts.encode())
            recalls.append(recall_at_k(result.pks(0), oracle, spec.k))
            self.report.latencies_ms.append(latency)
            self.report.waited_ms.append(result.waited_ms)
        self.report.recalls.extend(recalls)
        self.cluster.query_coord.observe_latency(latency)
        self.trace.append({
            "t": rel,
            "event": "search",
            "n": len(requests),
            "recall": round(float(np.mean(recalls)), 6),
            "latency_ms": round(latency, 3),
            "waited_ms": round(float(results[0].waited_ms), 3),
            "nodes": sorted(results[0].nodes),
            "coverage_gaps": coverage_gaps(self.cluster, spec.collection),
        })

    def _kill(self, event: SimEvent) -> None:
        alive = sorted(self.cluster.alive_query_nodes())
        if not alive:
            return
        victim = alive[0]
        self.cluster.kill_query_node(victim)
        self.trace.append({"t": event.at_ms - self.start_ms, "event": "kill", "node": victim})

    def execute(self) -> Tuple[RecallReport, List[Dict[str, Any]]]:
        self.prepare()
        queue = self.schedule()
        for event in queue.drain():
            self._advance_to(event.at_ms)
            if event.kind == "insert":
                rows = self._insert(int(event.payload["rows"]))
                self.trace.append({"t": event.at_ms - self.start_ms, "event": "insert", "rows": rows})
            elif event.kind == "search":
                self._search(event)
            elif event.kind == "kill":
                self._kill(event)
        self._advance_to(self.start_ms + self.spec.duration_ms)
        for at, before, after in self.cluster.query_coord.scale_events:
            self.trace.append({"t": at - self.start_ms, "event": "scale", "from": before, "to": after})
        if self.first_arrival is not None and self.last_finish > self.first_arrival:
            self.report.throughput_qps = self.report.queries * 1000.0 / (self.last_finish - self.first_arrival)
        return self.report, self.trace


def run_workload(
    spec: WorkloadSpec,
    root: str | os.PathLike,
    base_config: Optional[EngineConfig] = None,
) -> Tuple[RecallReport, List[Dict[str, Any]]]:
    """Run `spec` on a fresh cluster stored under `root`."""
    clock = VirtualClock() if spec.clock == "virtual" else SystemClock()
    cluster = Cluster(Path(root), spec.engine_config(base_config), clock)
    try:
        report, trace = WorkloadRun(spec, cluster).execute()
    finally:
        cluster.close()
    logger.info(f"workload finished: mean recall {report.mean_recall:.3f}, {report.errors} errors")
    return report, trace


# ---------------------------------------------------------------------------
# Bucket index bench
# ---------------------------------------------------------------------------

def bench_buckets(
    root: str | os.PathLike,
    data: np.ndarray,
    queries: np.ndarray,
    k: int = 50,
    nprobe: int = 8,
    replicas: int = 1,
    cap_bytes: int = rules.BUCKET_CAP_BYTES,
    metric: str | Metric = Metric.EUCLIDEAN,
    seed: int = rules.DEFAULT_SEED,
) -> RecallReport:
    """Recall and bytes read of the disk bucket index against an exact scan."""
    store = ObjectStore(root)
    index = BucketIndex.build(store, f"bench/r{replicas}", data, cap_bytes, replicas, seed, Metric.parse(metric))
    index.bytes_read = 0
    found = [[int(i) for i in index.search(q, nprobe, k)[0]] for q in queries]
    oracle = [brute_force_topk(data, q, metric, k) for q in queries]
    report = eval_recall(found, oracle, k)
    report.bytes_read = index.bytes_read
    return report
