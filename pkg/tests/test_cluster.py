import math

import numpy as np
import pytest

from logvec.algorithms.flat import exact_search
from logvec.algorithms.segment_index import IndexParams
from logvec.cluster import Cluster
from logvec.config import CoordinationSettings, EngineConfig, IndexSettings, LogSettings, NodeSettings
from logvec.models.errors import (
    CollectionExistsError,
    CollectionNotFoundError,
    DimensionMismatchError,
    DuplicatePrimaryKeyError,
    FilterError,
    HistoryExpiredError,
    NoCheckpointError,
    SchemaViolationError,
    UnknownPrimaryKeyError,
)
from logvec.models.schema import Entity, Schema
from logvec.models.timestamps import HlcTimestamp
from logvec.utils.clock import VirtualClock
from logvec.utils.vector_math import Metric

SCHEMA = Schema(vector_fields=[("vec", 4)], label_fields=["color"])
COLORS = ["red", "blue", "green"]


def _data(n=40, seed=0):
    return np.random.default_rng(seed).random((n, 4)).astype(np.float32)


def _entities(data, start=0):
    return [
        Entity(pk=start + i, vectors={"vec": v}, labels={"color": COLORS[(start + i) % 3]})
        for i, v in enumerate(data)
    ]


def _cluster(tmp_path, query_nodes=1, clock=None):
    config = EngineConfig(nodes=NodeSettings(query_nodes=query_nodes, default_shards=2))
    return Cluster(tmp_path / "store", config, clock or VirtualClock())


@pytest.fixture
def loaded(tmp_path):
    cluster = _cluster(tmp_path)
    data = _data()
    cluster.create_collection("docs", SCHEMA)
    cluster.insert("docs", _entities(data))
    yield cluster, data
    cluster.close()


def _truth(data, q, k, skip=()):
    deleted = np.zeros(len(data), dtype=bool)
    deleted[list(skip)] = True
    rows, _ = exact_search(data, q, Metric.EUCLIDEAN, k, deleted=deleted)
    return rows.tolist()


# ---------------------------------------------------------------------------
# Collections
# ---------------------------------------------------------------------------

def test_collection_catalogue(tmp_path):
    cluster = _cluster(tmp_path)
    desc = cluster.create_collection("docs", SCHEMA, shard_count=3)
    assert desc.shard_count == 3
    assert [d.name for d in cluster.list_collections()] == ["docs"]
    with pytest.raises(CollectionExistsError):
        cluster.create_collection("docs", SCHEMA)
    cluster.drop_collection("docs")
    with pytest.raises(CollectionNotFoundError):
        cluster.collection("docs")
    cluster.close()


# ---------------------------------------------------------------------------
# Writes and strong searches
# ---------------------------------------------------------------------------

def test_strong_search_sees_fresh_inserts(loaded):
    cluster, data = loaded
    q = data[7]
    result = cluster.search("docs", q, k=5, tau_ms=0.0)
    assert result.pks() == _truth(data, q, 5)
    assert result.issue_ts is not None


def test_delete_hides_rows(loaded):
    cluster, data = loaded
    cluster.delete("docs", [7, 8])
    q = data[7]
    assert cluster.search("docs", q, k=5, tau_ms=0.0).pks() == _truth(data, q, 5, skip=[7, 8])
    cluster.settle()
    assert cluster.count("docs") == 38


def test_write_errors(loaded):
    cluster, _ = loaded
    with pytest.raises(DuplicatePrimaryKeyError):
        cluster.insert("docs", [Entity(pk=3, vectors={"vec": np.zeros(4)})])
    with pytest.raises(UnknownPrimaryKeyError):
        cluster.delete("docs", [999])
    with pytest.raises(SchemaViolationError):
        cluster.insert("docs", [Entity(pk=1000, vectors={"vec": np.zeros(3)})])


def test_search_errors(loaded):
    cluster, _ = loaded
    with pytest.raises(DimensionMismatchError):
        cluster.search("docs", np.zeros(3), k=1)
    with pytest.raises(FilterError):
        cluster.search("docs", np.zeros(4), k=1, filter="size > 1")


def test_auto_id_primary_keys(tmp_path):
    cluster = _cluster(tmp_path)
    cluster.create_collection("auto", Schema(vector_fields=[("vec", 2)], auto_id=True))
    logged = cluster.insert("auto", [Entity(pk=None, vectors={"vec": [i, 0]}) for i in range(5)])
    pks = [e.pk for e in logged]
    assert len(set(pks)) == 5
    cluster.settle()
    assert cluster.query("auto") == sorted(pks)
    cluster.delete("auto", [pks[0]])
    assert cluster.query("auto") == sorted(pks[1:])
    cluster.close()


# ---------------------------------------------------------------------------
# Sealing and filters
# ---------------------------------------------------------------------------

def test_sealed_segments_answer_the_same(loaded):
    cluster, data = loaded
    sealed = cluster.seal("docs")
    assert sealed
    cluster.settle()
    stats = cluster.stats("docs")["collections"]["docs"]
    assert stats["sealed_segments"] == len(sealed)
    assert stats["growing_segments"] == 0
    assert stats["sealed_rows"] == 40
    q = data[11]
    assert cluster.search("docs", q, k=6, tau_ms=0.0).pks() == _truth(data, q, 6)


def test_delete_after_seal(loaded):
    cluster, data = loaded
    cluster.seal("docs")
    cluster.settle()
    cluster.delete("docs", [11])
    q = data[11]
    assert cluster.search("docs", q, k=4, tau_ms=0.0).pks() == _truth(data, q, 4, skip=[11])


def test_filtered_search_and_query(loaded):
    cluster, data = loaded
    result = cluster.search("docs", data[0], k=5, tau_ms=0.0, filter="color == 'red'")
    assert len(result.pks()) == 5
    assert all(pk % 3 == 0 for pk in result.pks())
    assert cluster.query("docs", "color == 'blue'") == [pk for pk in range(40) if pk % 3 == 1]
    assert cluster.delete_where("docs", "pk >= 30") == 10
    assert cluster.query("docs") == list(range(30))


def test_indexed_collection_searches_after_build(tmp_path):
    cluster = _cluster(tmp_path)
    data = _data(200, seed=2)
    params = IndexParams(kind="ivf_flat", nlist=4, nprobe=4)
    cluster.create_collection("docs", SCHEMA, index_params=params)
    cluster.insert("docs", _entities(data))
    cluster.seal("docs")
    cluster.settle()
    q = data[50]
    assert cluster.search("docs", q, k=5, tau_ms=0.0).pks() == _truth(data, q, 5)
    cluster.close()


# ---------------------------------------------------------------------------
# Failures and recovery
# ---------------------------------------------------------------------------

def test_killed_query_node_is_replaced(tmp_path):
    cluster = _cluster(tmp_path, query_nodes=2)
    data = _data()
    cluster.create_collection("docs", SCHEMA)
    cluster.insert("docs", _entities(data))
    cluster.seal("docs")
    cluster.insert("docs", _entities(_data(10, seed=4), start=40))
    cluster.settle()
    victim = sorted(cluster.alive_query_nodes())[0]
    cluster.kill_query_node(victim)
    for _ in range(4):
        cluster.step(cluster.config.coordination.heartbeat_interval_ms)
    cluster.settle()
    assert victim not in cluster.alive_query_nodes()
    assert victim not in cluster.query_coord.nodes
    assert cluster.query("docs") == list(range(50))
    q = data[3]
    full = np.concatenate([data, _data(10, seed=4)])
    assert cluster.search("docs", q, k=5, tau_ms=0.0).pks() == _truth(full, q, 5)
    cluster.close()


def test_reopen_keeps_data(tmp_path):
    cluster = _cluster(tmp_path)
    data = _data()
    cluster.create_collection("docs", SCHEMA)
    cluster.insert("docs", _entities(data[:20]))
    cluster.seal("docs")
    cluster.insert("docs", _entities(data[20:], start=20))
    cluster.delete("docs", [0])
    cluster.settle()
    cluster.close()

    reopened = _cluster(tmp_path)
    reopened.settle()
    assert reopened.query("docs") == list(range(1, 40))
    q = data[0]
    assert reopened.search("docs", q, k=3, tau_ms=0.0).pks() == _truth(data, q, 3, skip=[0])
    reopened.close()


def test_eventual_search_does_not_wait(loaded):
    cluster, data = loaded
    cluster.settle()
    result = cluster.search("docs", data[0], k=1, tau_ms=math.inf)
    assert result.waited_ms == 0.0


def test_search_many_matches_single_searches(loaded):
    cluster, data = loaded
    cluster.settle()
    requests = [cluster.make_request("docs", data[i], k=3, tau_ms=0.0) for i in (1, 2, 3)]
    batched = cluster.search_many(requests)
    assert [r.pks() for r in batched] == [_truth(data, data[i], 3) for i in (1, 2, 3)]


# ---------------------------------------------------------------------------
# Time travel
# ---------------------------------------------------------------------------

def test_restore_at_earlier_timestamps(loaded):
    cluster, _ = loaded
    cluster.settle()
    with pytest.raises(NoCheckpointError):
        cluster.restore_at("docs", HlcTimestamp(1))
    cluster.checkpoint("docs")
    before = cluster.now()
    cluster.delete("docs", [0, 1])
    cluster.insert("docs", _entities(_data(2, seed=9), start=40))
    cluster.settle()
    after = cluster.now()

    assert cluster.restore_at("docs", before).query() == list(range(40))
    snapshot = cluster.restore_at("docs", after)
    assert snapshot.query() == list(range(2, 42))
    assert cluster.query("docs", travel_ts=before, tau_ms=math.inf) == list(range(40))
    assert cluster.search("docs", np.zeros(4), k=40, travel_ts=before).pks() != []


def test_gc_moves_the_history_floor(loaded):
    cluster, _ = loaded
    cluster.settle()
    cluster.checkpoint("docs")
    middle = cluster.now()
    cluster.step(100)
    cluster.checkpoint("docs")
    cluster.step(100)

    assert cluster.gc("docs").checkpoints_deleted == []
    report = cluster.gc("docs", expiration_ms=1)
    assert len(report.checkpoints_deleted) == 1
    assert report.floor is not None and middle < report.floor
    with pytest.raises(HistoryExpiredError):
        cluster.restore_at("docs", middle)
    assert cluster.restore_at("docs", cluster.now()).query() == list(range(40))


# ---------------------------------------------------------------------------
# Background work
# ---------------------------------------------------------------------------

def _indexed_cluster(tmp_path, fail_builds):
    cluster = _cluster(tmp_path)
    for node in cluster.index_coord.nodes.values():
        node.fail_builds = fail_builds
    data = _data(100, seed=6)
    cluster.create_collection("docs", SCHEMA, index_params=IndexParams(kind="hnsw", m=4))
    cluster.insert("docs", _entities(data))
    cluster.seal("docs")
    cluster.settle()
    return cluster, data


def test_failed_index_build_is_retried(tmp_path):
    cluster, data = _indexed_cluster(tmp_path, fail_builds=1)
    tasks = list(cluster.index_coord.tasks.values())
    assert tasks and all(t.state == "done" for t in tasks)
    assert sum(t.attempts for t in tasks) == 1
    q = data[9]
    assert cluster.search("docs", q, k=3, tau_ms=0.0).pks() == _truth(data, q, 3)
    cluster.close()


def test_segments_without_index_stay_searchable(tmp_path):
    cluster, data = _indexed_cluster(tmp_path, fail_builds=100)
    assert all(t.state == "failed" for t in cluster.index_coord.tasks.values())
    q = data[20]
    assert cluster.search("docs", q, k=3, tau_ms=0.0).pks() == _truth(data, q, 3)
    cluster.close()


def test_small_sealed_segments_are_merged(tmp_path):
    cluster = _cluster(tmp_path)
    cluster.create_collection("docs", SCHEMA, shard_count=1)
    data = _data(8, seed=7)
    for i in range(4):
        cluster.insert("docs", _entities(data[2 * i:2 * i + 2], start=2 * i))
        cluster.seal("docs")
        cluster.settle()
    cluster.delete("docs", [5])
    cluster.settle()
    stats = cluster.stats("docs")["collections"]["docs"]
    assert stats["sealed_segments"] == 1
    assert stats["retired_segments"] == 4
    assert cluster.query("docs") == [0, 1, 2, 3, 4, 6, 7]
    q = data[5]
    assert cluster.search("docs", q, k=3, tau_ms=0.0).pks() == _truth(data, q, 3, skip=[5])
    cluster.close()


def test_idle_index_nodes_are_released_and_provisioned_again(tmp_path):
    cluster, _ = _indexed_cluster(tmp_path, fail_builds=0)
    assert len(cluster.index_coord.nodes) == 1
    idle = cluster.config.coordination.index_node_idle_ms
    for _ in range(idle // 500 + 2):
        cluster.step(500)
    assert cluster.index_coord.nodes == {}

    cluster.insert("docs", _entities(_data(50, seed=8), start=100))
    cluster.seal("docs")
    cluster.settle()
    assert len(cluster.index_coord.nodes) == 1
    tasks = list(cluster.index_coord.tasks.values())
    assert len(tasks) > 2 and all(t.state == "done" for t in tasks)
    cluster.close()


def test_autoscaler_follows_mean_latency(tmp_path):
    config = EngineConfig(
        nodes=NodeSettings(query_nodes=1, default_shards=2),
        coordination=CoordinationSettings(autoscale=True, autoscale_window=4),
    )
    cluster = Cluster(tmp_path / "store", config, VirtualClock())
    cluster.create_collection("docs", SCHEMA)
    cluster.insert("docs", _entities(_data()))
    cluster.seal("docs")
    cluster.settle()

    for _ in range(4):
        cluster.query_coord.observe_latency(200.0)
    cluster.settle()
    assert len(cluster.query_coord.nodes) == 2
    assert len(cluster.alive_query_nodes()) == 2

    # a window that is not full yet changes nothing
    for _ in range(3):
        cluster.query_coord.observe_latency(50.0)
    cluster.settle()
    assert len(cluster.query_coord.nodes) == 2

    cluster.query_coord.observe_latency(50.0)
    cluster.settle()
    assert len(cluster.query_coord.nodes) == 1
    assert len(cluster.query_nodes) == 1
    assert [(a, b) for _, a, b in cluster.query_coord.scale_events] == [(1, 2), (2, 1)]
    assert cluster.query("docs") == list(range(40))
    cluster.close()


def test_latency_inside_the_band_keeps_the_node_count(tmp_path):
    config = EngineConfig(coordination=CoordinationSettings(autoscale=True, autoscale_window=2))
    cluster = Cluster(tmp_path / "store", config, VirtualClock())
    for latency in (120.0, 130.0):
        cluster.query_coord.observe_latency(latency)
    cluster.settle()
    assert len(cluster.query_coord.nodes) == 1
    assert cluster.query_coord.scale_events == []
    cluster.close()


# ---------------------------------------------------------------------------
# Consistency, deletes and history under load
# ---------------------------------------------------------------------------

def test_retained_deletes_are_dropped_once_durable(tmp_path):
    cluster = _cluster(tmp_path, query_nodes=2)
    cluster.create_collection("docs", SCHEMA)
    cluster.insert("docs", _entities(_data()))
    cluster.delete("docs", [1, 2, 3])
    cluster.settle()

    def retained():
        return [
            served.retained_deletes()
            for node in cluster.alive_query_nodes().values()
            for served in node.collections.values()
        ]

    # the rows still sit in growing buffers, so a replay would need the deletes
    assert sum(retained()) >= 3

    cluster.seal("docs")
    cluster.settle()
    assert sum(retained()) == 0

    cluster.delete("docs", [4])
    cluster.step(cluster.config.log.tick_interval_ms)
    cluster.settle()
    assert sum(retained()) == 0

    victim = sorted(cluster.alive_query_nodes())[0]
    cluster.kill_query_node(victim)
    for _ in range(4):
        cluster.step(cluster.config.coordination.heartbeat_interval_ms)
    cluster.settle()
    assert cluster.query("docs") == [pk for pk in range(40) if pk not in (1, 2, 3, 4)]
    cluster.close()


@pytest.mark.parametrize("interval", [50, 200])
def test_waiting_shrinks_as_tau_grows(tmp_path, interval):
    config = EngineConfig(
        log=LogSettings(tick_interval_ms=interval),
        nodes=NodeSettings(query_nodes=2, default_shards=2),
    )
    cluster = Cluster(tmp_path / "store", config, VirtualClock())
    data = _data()
    cluster.create_collection("docs", SCHEMA)
    cluster.insert("docs", _entities(data))
    cluster.seal("docs")
    cluster.settle()

    wait_step = cluster.config.consistency.wait_step_ms
    mean_wait = {}
    for tau in (0.0, interval / 2, float(interval), 2.0 * interval, math.inf):
        rng = np.random.default_rng(5)
        waits = []
        for _ in range(40):
            cluster.step(int(rng.integers(0, 2 * interval)))
            result = cluster.search("docs", data[0], k=3, tau_ms=tau)
            assert result.pks() == _truth(data, data[0], 3)
            waits.append(result.waited_ms)
        if tau == 0.0:
            assert max(waits) <= interval + wait_step
        mean_wait[tau] = float(np.mean(waits))

    assert mean_wait[0.0] > 0
    assert mean_wait[interval / 2] <= mean_wait[0.0]
    # the consumed tick is never a full interval old
    assert mean_wait[float(interval)] == 0.0
    assert mean_wait[2.0 * interval] == 0.0
    assert mean_wait[math.inf] == 0.0
    cluster.close()


@pytest.mark.parametrize("threshold", [0.2, 0.5])
def test_deleted_rows_never_come_back(tmp_path, threshold):
    config = EngineConfig(
        index=IndexSettings(rebuild_threshold=threshold),
        nodes=NodeSettings(query_nodes=1, default_shards=2),
    )
    cluster = Cluster(tmp_path / "store", config, VirtualClock())
    rng = np.random.default_rng(42)
    data = rng.random((300, 4), dtype=np.float32)
    cluster.create_collection("docs", SCHEMA, index_params=IndexParams(kind="hnsw", m=4))
    cluster.insert("docs", _entities(data))
    cluster.seal("docs")
    cluster.settle()

    deleted = sorted(rng.choice(300, size=90, replace=False).tolist())
    cluster.delete("docs", deleted)
    cluster.settle()

    hosted = sum(node.hosted_rows() for node in cluster.alive_query_nodes().values())
    if threshold == 0.2:
        assert hosted < 300
    else:
        assert hosted == 300

    queries = rng.random((1000, 4), dtype=np.float32)
    result = cluster.search("docs", queries, k=10, tau_ms=0.0)
    gone = set(deleted)
    recalls = []
    for q, hits in zip(queries, result.hits):
        pks = [h.pk for h in hits]
        assert len(pks) == 10
        assert not gone & set(pks)
        recalls.append(len(set(pks) & set(_truth(data, q, 10, skip=deleted))) / 10)
    assert np.mean(recalls) >= 0.9
    assert cluster.count("docs") == 210
    cluster.close()


def test_restore_matches_a_replayed_transcript(tmp_path):
    cluster = _cluster(tmp_path)
    rng = np.random.default_rng(42)
    cluster.create_collection("docs", SCHEMA)
    cluster.insert("docs", _entities(rng.random((20, 4), dtype=np.float32)))
    cluster.settle()
    cluster.checkpoint("docs")

    live = set(range(20))
    next_pk = 20
    history = []
    for op in range(500):
        if live and rng.random() < 0.35:
            pk = int(rng.choice(sorted(live)))
            cluster.delete("docs", [pk])
            live.discard(pk)
        else:
            n = int(rng.integers(1, 4))
            cluster.insert("docs", _entities(rng.random((n, 4), dtype=np.float32), start=next_pk))
            live.update(range(next_pk, next_pk + n))
            next_pk += n
        history.append((cluster.now(), sorted(live)))
        if op % 60 == 59:
            cluster.seal("docs")
        if op % 100 == 99:
            cluster.checkpoint("docs")
        cluster.step(10)
    cluster.settle()

    picks = sorted(rng.choice(len(history), size=50, replace=False).tolist())
    for i in picks:
        ts, expected = history[i]
        assert cluster.restore_at("docs", ts).query() == expected

    report = cluster.gc("docs", expiration_ms=2500)
    assert report.floor is not None and report.checkpoints_deleted
    expired = [i for i in picks if history[i][0] < report.floor]
    kept = [i for i in picks if history[i][0] >= report.floor]
    assert expired and kept
    for i in expired:
        with pytest.raises(HistoryExpiredError):
            cluster.restore_at("docs", history[i][0])
    for i in kept:
        ts, expected = history[i]
        assert cluster.restore_at("docs", ts).query() == expected
    cluster.close()
