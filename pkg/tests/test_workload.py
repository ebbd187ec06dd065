import math

import numpy as np
import pytest
from pydantic import ValidationError

from logvec.config import EngineConfig, IndexSettings
from logvec.sim.datasets import queries_near, uniform
from logvec.sim.workload import (
    WorkloadSpec,
    bench_buckets,
    brute_force_topk,
    eval_recall,
    recall_at_k,
    run_workload,
)


def _spec(**overrides):
    base = dict(dim=8, initial_rows=300, query_rate=50.0, duration_ms=400, k=10, seal_rows=100)
    base.update(overrides)
    return WorkloadSpec(**base)


# ---------------------------------------------------------------------------
# Recall helpers
# ---------------------------------------------------------------------------

def test_recall_at_k():
    assert recall_at_k([1, 2, 3], [1, 2, 3], 3) == 1.0
    assert recall_at_k([1, 9, 3], [1, 2, 3], 3) == pytest.approx(2 / 3)
    assert recall_at_k([1, 2], [1, 2, 3, 4], 2) == 1.0
    # fewer live rows than k
    assert recall_at_k([5], [5], 10) == 1.0
    assert recall_at_k([], [], 10) == 1.0
    assert recall_at_k([1], [], 10) == 0.0


def test_eval_recall_report():
    report = eval_recall([[1, 2], [3, 4]], [[1, 2], [3, 5]], 2)
    assert report.queries == 2
    assert report.mean_recall == pytest.approx(0.75)
    assert report.to_dict()["mean_recall"] == 0.75
    assert "mean_recall" in report.to_table()
    with pytest.raises(ValueError):
        eval_recall([[1]], [], 1)


def test_brute_force_topk_breaks_ties_by_row():
    data = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]], dtype=np.float32)
    assert brute_force_topk(data, [1.0, 0.0], "l2", 2) == [0, 2]
    assert brute_force_topk(data, [1.0, 0.0], "l2", 2, row_ids=np.array([1, 2])) == [2, 1]


# ---------------------------------------------------------------------------
# Spec
# ---------------------------------------------------------------------------

def test_spec_derived_counts():
    spec = _spec(insert_rate=500.0)
    assert spec.total_rows == 500
    assert spec.request_count == 20
    assert spec.metric == "l2"


@pytest.mark.parametrize(
    "overrides",
    [
        {"initial_rows": 0},
        {"kill_query_node_at_ms": 10_000},
        {"metric": "hamming"},
        {"delete_fraction": 1.0},
        {"surprise": 1},
    ],
)
def test_invalid_specs(overrides):
    with pytest.raises(ValidationError):
        _spec(**overrides)


def test_engine_config_carries_the_spec():
    spec = _spec(query_nodes=3, shards=4, batch=8, tau_ms=0.0, index=IndexSettings(kind="hnsw", m=8))
    base = EngineConfig()
    config = spec.engine_config(base)
    assert config.nodes.query_nodes == 3
    assert config.nodes.default_shards == 4
    assert config.nodes.batching is True
    assert config.segments.seal_rows == 100
    assert config.index.kind == "hnsw"
    assert config.consistency.default_tau_ms == 0.0
    assert base.nodes.query_nodes == 1


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------

def test_static_flat_run_is_exact(tmp_path):
    report, trace = run_workload(_spec(), tmp_path / "run")
    assert report.queries == 20
    assert report.errors == 0
    assert report.mean_recall == 1.0
    assert all(e["coverage_gaps"] == [] for e in trace if e["event"] == "search")


def test_run_is_deterministic(tmp_path):
    spec = _spec(insert_rate=250.0, insert_batch=25, tau_ms=math.inf)
    first = run_workload(spec, tmp_path / "a")
    second = run_workload(spec, tmp_path / "b")
    assert first[0].to_dict() == second[0].to_dict()
    assert first[1] == second[1]


def test_strong_reads_see_every_acknowledged_insert(tmp_path):
    spec = _spec(insert_rate=500.0, insert_batch=20, tau_ms=0.0)
    report, trace = run_workload(spec, tmp_path / "run")
    assert report.errors == 0
    assert report.mean_recall == 1.0
    assert sum(e["rows"] for e in trace if e["event"] == "insert") == 200


def test_deletes_are_scored_against_live_rows(tmp_path):
    report, trace = run_workload(_spec(delete_fraction=0.2, tau_ms=0.0), tmp_path / "run")
    assert trace[0] == {"t": 0, "event": "delete", "rows": 60}
    assert report.mean_recall == 1.0


def test_batched_requests(tmp_path):
    report, _ = run_workload(_spec(batch=4, query_rate=10.0), tmp_path / "run")
    assert report.queries == 16
    assert report.mean_recall == 1.0


# ---------------------------------------------------------------------------
# Bucket index bench
# ---------------------------------------------------------------------------

def test_bench_buckets_reports_block_reads(tmp_path):
    data = uniform(600, 8, seed=3)
    queries = queries_near(data, 5, seed=4)
    report = bench_buckets(tmp_path, data, queries, k=10, nprobe=64, cap_bytes=512)
    assert report.queries == 5
    assert report.mean_recall >= 0.9
    assert report.bytes_read > 0 and report.bytes_read % 512 == 0
