import numpy as np
import pytest

from logvec.algorithms.flat import exact_search
from logvec.algorithms.hnsw import HnswIndex, build_hnsw, search_hnsw
from logvec.algorithms.index_io import index_from_bytes, index_to_bytes
from logvec.algorithms.ivf import IvfFlatIndex, build_ivf, search_ivf
from logvec.algorithms.kmeans import assign, kmeans
from logvec.algorithms.segment_index import IndexParams, SegmentIndex, build_temp_index
from logvec.algorithms.sq8 import Sq8Codec, sq8_decode, sq8_encode
from logvec.algorithms.bitmap import DeleteBitmap
from logvec.config import IndexSettings
from logvec.models.errors import DimensionMismatchError, IndexBuildError
from logvec.sim.datasets import clustered, queries_near, uniform
from logvec.utils.vector_math import Metric


def _data(n=600, dim=8, seed=0):
    return np.random.default_rng(seed).random((n, dim)).astype(np.float32)


def _recall(found, truth):
    return len(set(found.tolist()) & set(truth.tolist())) / len(truth)


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------

def test_kmeans_objective_never_increases():
    result = kmeans(_data(), 8, seed=1)
    history = result.objective_history
    assert all(b <= a + 1e-6 for a, b in zip(history, history[1:]))
    assert result.centroids.shape == (8, 8)
    assert np.array_equal(assign(_data(), result.centroids), result.labels)


def test_kmeans_is_seeded():
    a = kmeans(_data(), 4, seed=5)
    b = kmeans(_data(), 4, seed=5)
    assert np.array_equal(a.centroids, b.centroids)


def test_kmeans_separates_obvious_clusters():
    blob = np.concatenate([np.zeros((20, 2)), np.full((20, 2), 10.0)])
    result = kmeans(blob, 2)
    assert len(set(result.labels[:20].tolist())) == 1
    assert result.labels[0] != result.labels[-1]


@pytest.mark.parametrize("k", [0, 5])
def test_kmeans_rejects_bad_k(k):
    with pytest.raises(IndexBuildError):
        kmeans(np.zeros((4, 2)), k)


# ---------------------------------------------------------------------------
# IVF
# ---------------------------------------------------------------------------

def test_ivf_lists_partition_rows():
    index = build_ivf(_data(), nlist=10)
    rows = np.sort(np.concatenate(index.lists))
    assert rows.tolist() == list(range(600))
    assert index.nlist == 10 and len(index) == 600


def test_ivf_full_probe_equals_exact():
    data = _data()
    index = IvfFlatIndex.build(data, 10, Metric.EUCLIDEAN)
    q = _data(1, seed=9)[0]
    ids, _ = index.search(q, nprobe=10, k=10)
    truth, _ = exact_search(data, q, Metric.EUCLIDEAN, 10)
    assert ids.tolist() == truth.tolist()


def test_ivf_skips_deleted_rows():
    data = _data()
    index = build_ivf(data, nlist=4)
    q = data[17]
    bitmap = DeleteBitmap(segment_id=1, size=600)
    bitmap.set(17)
    ids, _ = search_ivf(index, q, nprobe=4, k=5, bitmap=bitmap)
    assert 17 not in ids.tolist()


def test_ivf_rejects_too_many_lists():
    with pytest.raises(IndexBuildError):
        build_ivf(_data(5), nlist=6)


def _mean_recall(search, data, queries, k=50):
    recalls = []
    for q in queries:
        ids, _ = search(q)
        truth, _ = exact_search(data, q, Metric.EUCLIDEAN, k)
        recalls.append(_recall(ids, truth))
    return float(np.mean(recalls))


@pytest.fixture(scope="module")
def uniform_10k():
    return uniform(10_000, 32, seed=42), uniform(50, 32, seed=43)


def test_ivf_recall_on_clustered_data():
    data = clustered(10_000, 32, seed=42)
    queries = queries_near(data, 50)
    index = build_ivf(data, nlist=64)
    assert _mean_recall(lambda q: index.search(q, nprobe=8, k=50), data, queries) >= 0.8


def test_ivf_recall_on_uniform_data_grows_with_lists_scanned(uniform_10k):
    data, queries = uniform_10k
    index = build_ivf(data, nlist=64)
    recall = {p: _mean_recall(lambda q: index.search(q, nprobe=p, k=50), data, queries) for p in (8, 16, 32, 64)}
    # structureless data: 8 of 64 lists hold about half of the true neighbours
    assert recall[8] >= 0.45
    assert recall[8] <= recall[16] <= recall[32] <= recall[64]
    assert recall[32] >= 0.8
    assert recall[64] >= 0.99


def test_hnsw_recall_on_uniform_data(uniform_10k):
    data, queries = uniform_10k
    index = build_hnsw(data, m=16, ef_construction=200)
    assert _mean_recall(lambda q: search_hnsw(index, q, ef_search=64, k=50), data, queries) >= 0.8


def test_ivf_sq8_finds_the_row_itself():
    data = _data()
    index = IvfFlatIndex.build(data, 8, Metric.EUCLIDEAN, quantization="sq8")
    for row in (0, 99, 321):
        ids, _ = index.search(data[row], nprobe=8, k=1)
        assert ids.tolist() == [row]


# ---------------------------------------------------------------------------
# HNSW
# ---------------------------------------------------------------------------

def test_hnsw_recall_and_degree():
    data = _data(800, 8)
    index = build_hnsw(data, m=8, ef_construction=64)
    assert len(index) == 800
    assert index.degree_ok()
    queries = _data(20, 8, seed=3)
    recalls = []
    for q in queries:
        ids, _ = search_hnsw(index, q, ef_search=64, k=10)
        truth, _ = exact_search(data, q, Metric.EUCLIDEAN, 10)
        recalls.append(_recall(ids, truth))
    assert np.mean(recalls) >= 0.9


def test_hnsw_is_deterministic_for_a_seed():
    data = _data(200, 4)
    a = HnswIndex.build(data, Metric.EUCLIDEAN, m=4, seed=11)
    b = HnswIndex.build(data, Metric.EUCLIDEAN, m=4, seed=11)
    assert a.levels == b.levels
    assert a.layers == b.layers


def test_hnsw_deleted_rows_never_returned():
    data = _data(300, 4)
    index = build_hnsw(data, m=6, ef_construction=32)
    mask = np.zeros(300, dtype=bool)
    mask[:150] = True
    ids, _ = index.search(data[0], k=10, ef=16, deleted=mask)
    assert len(ids) == 10
    assert all(i >= 150 for i in ids.tolist())


def test_hnsw_empty_and_small_m():
    empty = HnswIndex.build(np.zeros((0, 3)), Metric.EUCLIDEAN)
    assert empty.search(np.zeros(3), k=3)[0].shape == (0,)
    with pytest.raises(IndexBuildError):
        HnswIndex(np.zeros((1, 3)), Metric.EUCLIDEAN, m=1)


# ---------------------------------------------------------------------------
# SQ8
# ---------------------------------------------------------------------------

def test_sq8_error_is_bounded_by_half_a_step():
    data = _data()
    codec = Sq8Codec.train(data)
    decoded = codec.decode(codec.encode(data))
    step = (codec.maxs - codec.mins) / 255.0
    assert np.all(np.abs(decoded - data) <= step / 2 + 1e-6)


def test_sq8_constant_dimension_and_bytes():
    data = np.array([[1.0, 0.0], [1.0, 1.0]], dtype=np.float32)
    codec = Sq8Codec.train(data)
    raw = sq8_encode(codec, data[1])
    assert len(raw) == codec.code_size == 2
    assert sq8_decode(codec, raw).tolist() == pytest.approx([1.0, 1.0])
    back = Sq8Codec.from_bytes(codec.to_bytes(), 2)
    assert np.array_equal(back.mins, codec.mins)
    with pytest.raises(DimensionMismatchError):
        codec.encode(np.zeros((1, 3)))


# ---------------------------------------------------------------------------
# Segment index wrapper and persistence
# ---------------------------------------------------------------------------

def test_index_params_validation():
    with pytest.raises(IndexBuildError):
        IndexParams(kind="lsh")
    with pytest.raises(IndexBuildError):
        IndexParams(kind="hnsw", quantization="sq8")
    with pytest.raises(IndexBuildError):
        IndexParams(nlist=4, nprobe=5)
    assert IndexParams(ef_search=8).ef_for(20) == 20


def test_index_params_from_settings_and_dict():
    params = IndexParams.from_settings(IndexSettings(kind="hnsw", m=8), "cosine")
    assert params.kind == "hnsw" and params.metric == "cosine" and params.m == 8
    assert IndexParams.from_dict({**params.to_dict(), "metric": "angular", "extra": 1}) == params
    assert IndexParams.from_dict(None) == IndexParams()


def test_ivf_on_small_segment_shrinks_nlist():
    index = SegmentIndex.build(IndexParams(kind="ivf_flat", nlist=64, nprobe=8), _data(20))
    assert index.index.nlist == 20


@pytest.mark.parametrize("kind", ["flat", "ivf_flat", "hnsw"])
def test_index_bytes_roundtrip_answers_the_same(kind):
    data = _data(300)
    params = IndexParams(kind=kind, nlist=8, nprobe=3, m=6, ef_construction=32, ef_search=16)
    index = SegmentIndex.build(params, data)
    restored = index_from_bytes(index_to_bytes(index), data)
    assert restored.kind == kind
    assert restored.params == params
    for q in _data(5, seed=4):
        assert index.search(q, 5)[0].tolist() == restored.search(q, 5)[0].tolist()


def test_index_bytes_bad_magic():
    data = _data(10)
    raw = index_to_bytes(SegmentIndex.build(IndexParams(), data))
    with pytest.raises(IndexBuildError):
        index_from_bytes(b"ZZZZ" + raw[4:], data)


def test_temp_index_matches_a_scan():
    data = _data(256)
    index = build_temp_index(data, nlist=16)
    q = _data(1, seed=8)[0]
    truth, _ = exact_search(data, q, Metric.EUCLIDEAN, 10)
    assert index.search(q, 10)[0].tolist() == truth.tolist()
