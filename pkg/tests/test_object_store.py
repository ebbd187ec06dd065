import pytest

from logvec.models.errors import ObjectNotFoundError
from logvec.storage.object_store import ObjectStore, segment_key, segment_prefix


def test_put_get_and_counters(tmp_path):
    store = ObjectStore(tmp_path)
    store.put("collection/1/segment/2/binlog/100", b"abcdef")
    assert store.get("collection/1/segment/2/binlog/100") == b"abcdef"
    assert store.read_range("collection/1/segment/2/binlog/100", 2, 3) == b"cde"
    assert store.size("collection/1/segment/2/binlog/100") == 6
    assert store.bytes_written == 6
    assert store.bytes_read == 9
    store.reset_counters()
    assert store.bytes_read == 0


def test_missing_object_raises(tmp_path):
    store = ObjectStore(tmp_path)
    with pytest.raises(ObjectNotFoundError):
        store.get("nope")
    with pytest.raises(ObjectNotFoundError):
        store.size("nope")
    assert not store.delete("nope")


@pytest.mark.parametrize("key", ["", "/abs", "a/../b", "dir/"])
def test_invalid_keys_raise(tmp_path, key):
    with pytest.raises(ValueError):
        ObjectStore(tmp_path).put(key, b"x")


def test_list_and_delete_prefix(tmp_path):
    store = ObjectStore(tmp_path)
    keys = [segment_key(1, 2, "binlog/1"), segment_key(1, 2, "delta"), segment_key(1, 3, "delta")]
    for key in keys:
        store.put(key, b"x")
    assert store.list(segment_prefix(1, 2)) == sorted(keys[:2])
    assert store.delete_prefix(segment_prefix(1, 2)) == sorted(keys[:2])
    assert store.list() == [keys[2]]


def test_overwrite_replaces_content(tmp_path):
    store = ObjectStore(tmp_path)
    store.put("k", b"old")
    store.put("k", b"new")
    assert store.get("k") == b"new"
    assert store.list() == ["k"]
