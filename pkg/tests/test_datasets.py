import numpy as np
import pytest

from logvec.cluster import Cluster
from logvec.models.errors import DatasetError
from logvec.models.schema import Schema
from logvec.sim.datasets import (
    clustered,
    export_fvecs,
    ingest,
    load_dataset,
    queries_near,
    read_csv_vectors,
    read_fvecs,
    read_vectors,
    synthetic,
    uniform,
)
from logvec.sim.events import EventQueue


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def test_fvecs_layout_and_read(tmp_path):
    data = np.arange(6, dtype=np.float32).reshape(2, 3)
    path = tmp_path / "d" / "base.fvecs"
    export_fvecs(path, data)
    words = np.fromfile(path, dtype="<i4")
    assert words.size == 8 and words[0] == 3 and words[4] == 3
    assert np.array_equal(read_fvecs(path), data)
    assert np.array_equal(read_vectors(path), data)


def test_fvecs_errors(tmp_path):
    with pytest.raises(DatasetError):
        read_fvecs(tmp_path / "missing.fvecs")
    odd = tmp_path / "odd.fvecs"
    odd.write_bytes(b"\x01\x00\x00")
    with pytest.raises(DatasetError):
        read_fvecs(odd)
    mixed = tmp_path / "mixed.fvecs"
    np.array([2, 0, 0, 3, 0, 0], dtype="<i4").tofile(mixed)
    with pytest.raises(DatasetError):
        read_fvecs(mixed)


def test_empty_fvecs(tmp_path):
    path = tmp_path / "empty.fvecs"
    path.write_bytes(b"")
    assert read_fvecs(path).shape == (0, 0)


def test_csv_vectors(tmp_path):
    path = tmp_path / "v.csv"
    path.write_text("# header\n1,2\n\n3.5,-4\n", encoding="utf-8")
    assert read_csv_vectors(path).tolist() == [[1.0, 2.0], [3.5, -4.0]]
    path.write_text("1,2\n3\n", encoding="utf-8")
    with pytest.raises(DatasetError):
        read_csv_vectors(path)
    path.write_text("1,x\n", encoding="utf-8")
    with pytest.raises(DatasetError):
        read_csv_vectors(path)


def test_unknown_format(tmp_path):
    with pytest.raises(DatasetError):
        read_vectors(tmp_path / "v.bin")


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def test_synthetic_sets_are_seeded():
    assert np.array_equal(uniform(50, 4, seed=1), synthetic("uniform", 50, 4, seed=1))
    assert np.array_equal(clustered(50, 4, seed=2), synthetic("clustered", 50, 4, seed=2))
    assert not np.array_equal(uniform(50, 4, seed=1), uniform(50, 4, seed=2))
    assert uniform(10, 3).dtype == np.float32
    with pytest.raises(DatasetError):
        synthetic("gaussian", 5, 2)


def test_queries_stay_near_the_data():
    data = uniform(100, 4)
    queries = queries_near(data, 7, noise=0.001)
    assert queries.shape == (7, 4)
    nearest = np.min(np.linalg.norm(data[None, :, :] - queries[:, None, :], axis=2), axis=1)
    assert np.all(nearest < 0.05)


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def test_ingest_and_load_dataset(tmp_path):
    cluster = Cluster(tmp_path / "store")
    path = tmp_path / "base.csv"
    path.write_text("\n".join(f"{i},0,1" for i in range(12)), encoding="utf-8")
    desc = load_dataset(cluster, "imported", path)
    assert desc.schema.vector_field().dim == 3
    assert cluster.query("imported") == list(range(12))

    assert ingest(cluster, "imported", np.ones((3, 3)), start_pk=100) == 3
    assert cluster.count("imported") == 15
    assert ingest(cluster, "imported", np.zeros((0, 3))) == 0
    with pytest.raises(DatasetError):
        ingest(cluster, "imported", np.ones((2, 5)))
    cluster.close()


def test_ingest_into_auto_id_collection(tmp_path):
    cluster = Cluster(tmp_path / "store")
    cluster.create_collection("auto", Schema(vector_fields=[("vec", 2)], auto_id=True))
    ingest(cluster, "auto", uniform(9, 2), batch_rows=4)
    assert cluster.count("auto") == 9
    cluster.close()


# ---------------------------------------------------------------------------
# Event queue
# ---------------------------------------------------------------------------

def test_event_queue_orders_by_time_then_schedule_order():
    queue = EventQueue()
    queue.schedule(20, "b")
    queue.schedule(10, "a", rows=5)
    queue.schedule(20, "c")
    assert len(queue) == 3
    assert queue.peek().kind == "a"
    events = list(queue.drain())
    assert [e.kind for e in events] == ["a", "b", "c"]
    assert events[0].payload == {"rows": 5}
    assert queue.peek() is None
