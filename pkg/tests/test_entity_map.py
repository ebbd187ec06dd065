from logvec.nodes.entity_map import EntitySegmentMap
from logvec.storage.object_store import ObjectStore


def test_lookup_memtable_then_runs(tmp_path):
    m = EntitySegmentMap(ObjectStore(tmp_path), 1, 0)
    m.put(1, 10)
    m.put(2, 10)
    m.flush(wal_offset=5)
    m.put(2, 11)
    assert m.lookup(1) == 10
    assert m.lookup(2) == 11
    assert 3 not in m


def test_tombstone_hides_older_runs(tmp_path):
    m = EntitySegmentMap(ObjectStore(tmp_path), 1, 0)
    m.put("a", 3)
    m.flush(wal_offset=1)
    m.remove("a")
    assert m.lookup("a") is None
    m.flush(wal_offset=2)
    assert "a" not in m


def test_remap_moves_only_live_keys_of_old_segments(tmp_path):
    m = EntitySegmentMap(ObjectStore(tmp_path), 1, 0)
    m.put(1, 10)
    m.put(2, 11)
    m.put(3, 12)
    m.remove(2)
    assert m.remap([1, 2, 3], old_segments=[10, 11], new_segment=20) == 1
    assert m.lookup(1) == 20
    assert m.lookup(2) is None
    assert m.lookup(3) == 12


def test_reload_from_manifest(tmp_path):
    store = ObjectStore(tmp_path)
    m = EntitySegmentMap(store, 2, 1)
    for pk in range(5):
        m.put(pk, 7)
    m.flush(wal_offset=9)
    m.remove(4)
    m.flush(wal_offset=12)
    assert m.flush(wal_offset=15) is None

    loaded = EntitySegmentMap.load(store, 2, 1)
    assert loaded.wal_offset == 15
    assert len(loaded.runs) == 2
    assert [loaded.lookup(pk) for pk in range(5)] == [7, 7, 7, 7, None]


def test_load_without_manifest_is_empty(tmp_path):
    loaded = EntitySegmentMap.load(ObjectStore(tmp_path), 1, 0)
    assert loaded.runs == [] and loaded.wal_offset == 0
