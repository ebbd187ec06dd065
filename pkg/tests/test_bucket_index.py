import numpy as np
import pytest

from logvec.algorithms.bucket_index import (
    BucketIndex,
    build_buckets,
    members_per_bucket,
    search_two_stage,
    split_to_cap,
)
from logvec.models.errors import ConfigurationError, IndexBuildError
from logvec.storage.object_store import ObjectStore

CAP = 512


def _data(n=300, dim=8, seed=0):
    return np.random.default_rng(seed).random((n, dim)).astype(np.float32)


def test_members_per_bucket():
    assert members_per_bucket(8, 4096) == 255
    assert members_per_bucket(8, CAP) == 31


def test_split_covers_every_row_once():
    groups = split_to_cap(_data(), 31, seed=1)
    rows = np.sort(np.concatenate(groups))
    assert rows.tolist() == list(range(300))
    assert all(0 < len(g) <= 31 for g in groups)


def test_split_of_identical_rows_falls_back_to_halves():
    groups = split_to_cap(np.ones((10, 2), dtype=np.float32), 3, seed=0)
    assert sorted(np.concatenate(groups).tolist()) == list(range(10))
    assert all(len(g) <= 3 for g in groups)


def test_buckets_fit_the_block_and_cover_each_replica(tmp_path):
    store = ObjectStore(tmp_path)
    index = build_buckets(store, "bench/b", _data(), bucket_cap_bytes=CAP, replicas=2)
    members = index.bucket_members()
    assert all(len(rows) <= members_per_bucket(8, CAP) for rows in members.values())
    for replica in (0, 1):
        rows = np.concatenate([members[b] for b in range(index.bucket_count) if index.center_replicas[b] == replica])
        assert sorted(rows.tolist()) == list(range(300))
    assert store.size("bench/b/buckets") == (index.header_blocks + index.bucket_count) * CAP


def test_full_probe_finds_each_row(tmp_path):
    data = _data()
    index = BucketIndex.build(ObjectStore(tmp_path), "b", data, cap_bytes=CAP)
    for row in (0, 123, 299):
        ids, _ = search_two_stage(index, data[row], index.bucket_count, 1)
        assert ids.tolist() == [row]


def test_each_probed_bucket_costs_one_block(tmp_path):
    index = BucketIndex.build(ObjectStore(tmp_path), "b", _data(), cap_bytes=CAP)
    index.search(_data(1, seed=5)[0], nprobe=3, k=5)
    assert index.bytes_read == 3 * CAP


def test_replicas_return_each_row_once(tmp_path):
    data = _data()
    index = BucketIndex.build(ObjectStore(tmp_path), "b", data, cap_bytes=CAP, replicas=2)
    ids, _ = index.search(data[7], nprobe=index.bucket_count, k=20)
    assert len(set(ids.tolist())) == len(ids) == 20


def test_open_answers_like_the_built_index(tmp_path):
    store = ObjectStore(tmp_path)
    data = _data()
    built = BucketIndex.build(store, "b/", data, cap_bytes=CAP)
    opened = BucketIndex.open(store, "b")
    assert opened.bucket_count == built.bucket_count
    for q in _data(4, seed=2):
        assert opened.search(q, 4, 10)[0].tolist() == built.search(q, 4, 10)[0].tolist()


def test_build_errors(tmp_path):
    store = ObjectStore(tmp_path)
    with pytest.raises(IndexBuildError):
        BucketIndex.build(store, "b", np.zeros((0, 4)))
    with pytest.raises(ConfigurationError):
        BucketIndex.build(store, "b", _data(10, dim=600), cap_bytes=CAP)
    with pytest.raises(ConfigurationError):
        BucketIndex.build(store, "b", _data(10), replicas=0)


def test_open_rejects_bad_magic(tmp_path):
    store = ObjectStore(tmp_path)
    BucketIndex.build(store, "b", _data(50), cap_bytes=CAP)
    raw = store.get("b/buckets")
    store.put("b/buckets", b"XXXX" + raw[4:])
    with pytest.raises(IndexBuildError):
        BucketIndex.open(store, "b")
