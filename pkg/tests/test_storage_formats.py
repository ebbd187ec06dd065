import numpy as np
import pytest

from logvec.models.columns import SegmentColumns
from logvec.models.errors import StorageError
from logvec.models.schema import DataType, Entity, Schema
from logvec.models.segment import SealTrigger, SegmentDescriptor, SegmentState
from logvec.models.timestamps import HlcTimestamp
from logvec.storage.binlog import (
    BinlogHeader,
    decode_binlog,
    encode_binlog,
    load_segment_columns,
    paths_by_field,
    segment_to_binlogs,
)
from logvec.storage.checkpoint import (
    Checkpoint,
    latest_at_or_before,
    list_checkpoints,
    load_checkpoint,
    write_checkpoint,
)
from logvec.storage.deltalog import DeltaLog
from logvec.storage.object_store import ObjectStore
from logvec.storage.sorted_run import SortedRun, is_tombstone
from logvec.utils.constants import TOMBSTONE_SEGMENT


def _columns(schema, n=5):
    rng = np.random.default_rng(0)
    rows = [
        Entity(
            pk=i,
            vectors={"vec": rng.random(3)},
            labels={"color": ["red", "blue"][i % 2]},
            numerics={"price": i * 1.5},
        ).with_lsn(HlcTimestamp(1000 + i))
        for i in range(n)
    ]
    return SegmentColumns.from_entities(schema, rows)


# ---------------------------------------------------------------------------
# Binlogs
# ---------------------------------------------------------------------------

def test_segment_binlogs_reload_every_column(tmp_path):
    schema = Schema(vector_fields=[("vec", 3)], label_fields=["color"], numeric_fields=["price"])
    store = ObjectStore(tmp_path)
    cols = _columns(schema)
    blobs = segment_to_binlogs(schema, 1, 9, cols)
    assert len(blobs) == len(schema.all_fields()) + 1
    for key, data in blobs.items():
        store.put(key, data)

    back = load_segment_columns(store, schema, paths_by_field(blobs))
    assert back.pks == cols.pks
    assert np.array_equal(back.lsns, cols.lsns)
    assert np.allclose(back.vectors["vec"], cols.vectors["vec"])
    assert back.labels["color"] == cols.labels["color"]
    assert np.allclose(back.numerics["price"], cols.numerics["price"])


def test_binlog_header_records_lsn_range():
    schema = Schema(vector_fields=[("vec", 3)], label_fields=["color"], numeric_fields=["price"])
    cols = _columns(schema)
    blobs = segment_to_binlogs(schema, 1, 9, cols)
    field = schema.vector_field()
    key = paths_by_field(blobs)[str(field.field_id)]
    decoded = decode_binlog(blobs[key], field)
    assert decoded.header.row_count == 5
    assert decoded.header.min_lsn == HlcTimestamp(1000).encode()
    assert decoded.header.max_lsn == HlcTimestamp(1004).encode()


def test_binlog_rejects_wrong_field_and_bad_magic():
    schema = Schema(vector_fields=[("vec", 2)])
    field = schema.vector_field()
    data = encode_binlog(BinlogHeader(1, 1, field.field_id, 1, 0, 0), field, np.ones((1, 2)))
    with pytest.raises(StorageError):
        decode_binlog(data, schema.primary_key)
    with pytest.raises(StorageError):
        decode_binlog(b"XXXX" + data[4:], field)
    with pytest.raises(StorageError):
        decode_binlog(data[:10], field)


def test_string_primary_keys_roundtrip(tmp_path):
    schema = Schema(vector_fields=[("vec", 2)], pk_type=DataType.VARCHAR)
    rows = [Entity(pk=f"doc-{i}", vectors={"vec": [i, i]}).with_lsn(HlcTimestamp(10 + i)) for i in range(3)]
    cols = SegmentColumns.from_entities(schema, rows)
    store = ObjectStore(tmp_path)
    blobs = segment_to_binlogs(schema, 2, 4, cols)
    for key, data in blobs.items():
        store.put(key, data)
    assert load_segment_columns(store, schema, paths_by_field(blobs)).pks == ["doc-0", "doc-1", "doc-2"]


# ---------------------------------------------------------------------------
# Delta logs
# ---------------------------------------------------------------------------

def test_delta_log_add_is_idempotent():
    log = DeltaLog()
    assert log.add(1, HlcTimestamp(5))
    assert not log.add(1, HlcTimestamp(5))
    assert log.add(1, HlcTimestamp(9))
    assert len(log) == 2


def test_delta_log_visibility_window():
    log = DeltaLog.from_entries([(7, HlcTimestamp(100))])
    assert log.deleted_after(7, HlcTimestamp(50))
    assert not log.deleted_after(7, HlcTimestamp(100))
    assert not log.deleted_after(7, HlcTimestamp(50), upto=HlcTimestamp(99))
    assert log.deleted_after(7, HlcTimestamp(50), upto=HlcTimestamp(100))
    assert not log.deleted_after(8, HlcTimestamp(1))


@pytest.mark.parametrize("pks", [[3, 1, 2], ["b", "a"]])
def test_delta_log_bytes_keep_entries(pks):
    log = DeltaLog.from_entries([(pk, HlcTimestamp(10 + i)) for i, pk in enumerate(pks)])
    assert DeltaLog.from_bytes(log.to_bytes()).entries() == log.entries()


def test_delta_log_bad_magic():
    with pytest.raises(StorageError):
        DeltaLog.from_bytes(b"NOPE" + bytes(16))


# ---------------------------------------------------------------------------
# Sorted runs
# ---------------------------------------------------------------------------

def test_sorted_run_lookup_and_tombstone():
    run = SortedRun([(5, 2), (1, 1), (9, TOMBSTONE_SEGMENT)])
    assert [pk for pk, _ in run.items()] == [1, 5, 9]
    assert run.lookup(5) == 2
    assert run.lookup(4) is None
    assert is_tombstone(run.lookup(9))
    assert SortedRun.from_bytes(run.to_bytes()).items() == run.items()


def test_sorted_run_rejects_duplicates():
    with pytest.raises(ValueError):
        SortedRun([(1, 1), (1, 2)])


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _descriptor(sid):
    d = SegmentDescriptor(sid, 1, 0, "wal/1/shard-0", row_count=10)
    d.seal(SealTrigger.MANUAL, HlcTimestamp(50))
    d.binlog_paths = {"1": f"collection/1/segment/{sid}/binlog/1"}
    return d


def test_checkpoint_write_list_and_pick(tmp_path):
    store = ObjectStore(tmp_path)
    for ts in (100, 200, 300):
        write_checkpoint(
            store,
            Checkpoint(1, HlcTimestamp(ts), [_descriptor(ts // 100)], {"wal/1/shard-0": ts}),
        )
    assert list_checkpoints(store, 1) == [HlcTimestamp(100), HlcTimestamp(200), HlcTimestamp(300)]
    assert list_checkpoints(store, 2) == []

    picked = latest_at_or_before(store, 1, HlcTimestamp(250))
    assert picked.checkpoint_ts == HlcTimestamp(200)
    assert picked.replay_from == {"wal/1/shard-0": 200}
    assert picked.segments[0].state is SegmentState.SEALED
    assert latest_at_or_before(store, 1, HlcTimestamp(99)) is None


def test_checkpoint_lists_referenced_objects(tmp_path):
    store = ObjectStore(tmp_path)
    d = _descriptor(4)
    d.delta_path = "collection/1/segment/4/delta"
    cp = Checkpoint(1, HlcTimestamp(10), [d])
    key = write_checkpoint(store, cp)
    assert load_checkpoint(store, key).referenced_keys() == [
        "collection/1/segment/4/binlog/1",
        "collection/1/segment/4/delta",
    ]
