import numpy as np
import pytest

from logvec.algorithms.flat import exact_search
from logvec.models.errors import SegmentSealedError
from logvec.models.schema import Entity, Schema
from logvec.models.segment import SealTrigger, SegmentDescriptor
from logvec.models.timestamps import HlcTimestamp
from logvec.nodes.segment_buffer import GrowingSegmentBuffer
from logvec.utils.vector_math import Metric

SCHEMA = Schema(vector_fields=[("vec", 4)])


def _buffer(slice_rows=8, nlist=None):
    desc = SegmentDescriptor(1, 1, 0, "wal/1/shard-0")
    return GrowingSegmentBuffer(desc, SCHEMA, slice_rows=slice_rows, temp_index_nlist=nlist)


def _fill(buf, vectors, start_ts=100):
    for i, v in enumerate(vectors):
        buf.append(Entity(pk=i, vectors={"vec": v}).with_lsn(HlcTimestamp(start_ts + i)), offset=i)


def test_slices_close_at_slice_rows():
    buf = _buffer(slice_rows=8, nlist=2)
    _fill(buf, np.random.default_rng(0).random((20, 4)))
    assert len(buf) == 20
    assert len(buf.slices) == 2 and len(buf.open_rows) == 4
    assert len(buf.temp_indexes[0]) == 1
    assert buf.descriptor.slice_count == 2
    assert buf.start_offset == 0
    assert buf.descriptor.progress == HlcTimestamp(119)
    assert buf.row_lsn(9) == HlcTimestamp(109)
    assert buf.row_lsn(17) == HlcTimestamp(117)


def test_search_matches_exact_over_all_rows():
    data = np.random.default_rng(1).random((37, 4)).astype(np.float32)
    buf = _buffer(slice_rows=8, nlist=2)
    _fill(buf, data)
    q = data[30]
    rows, _, scanned = buf.search(q, Metric.EUCLIDEAN, 5)
    truth, _ = exact_search(data, q, Metric.EUCLIDEAN, 5)
    assert rows.tolist() == truth.tolist()
    assert scanned == 37


def test_apply_delete_respects_timestamps():
    buf = _buffer()
    _fill(buf, np.eye(4))
    assert buf.apply_delete(2, HlcTimestamp(102)) == 0
    assert buf.apply_delete(2, HlcTimestamp(103)) == 1
    assert buf.apply_delete(2, HlcTimestamp(104)) == 0
    rows, _, _ = buf.search(np.array([0, 0, 1, 0]), Metric.EUCLIDEAN, 4)
    assert 2 not in rows.tolist()


def test_filter_mask_and_columns():
    buf = _buffer(slice_rows=2)
    _fill(buf, np.eye(4) * np.arange(1, 5)[:, None])
    cols = buf.columns()
    assert cols.pks == [0, 1, 2, 3]
    rows, _, _ = buf.search(np.zeros(4), Metric.EUCLIDEAN, 4, filter_mask=np.array([False, True, False, True]))
    assert rows.tolist() == [1, 3]


def test_seal_trigger_and_sealed_buffer():
    buf = _buffer()
    _fill(buf, np.ones((3, 4)))
    assert buf.seal_trigger_after_insert(seal_rows=4, seal_bytes=10**6) is None
    assert buf.seal_trigger_after_insert(seal_rows=3, seal_bytes=10**6) is SealTrigger.SIZE
    buf.descriptor.seal(SealTrigger.SIZE, HlcTimestamp(200))
    with pytest.raises(SegmentSealedError):
        buf.append(Entity(pk=9, vectors={"vec": np.ones(4)}).with_lsn(HlcTimestamp(300)))


def test_unlogged_entity_is_rejected():
    with pytest.raises(ValueError):
        _buffer().append(Entity(pk=1, vectors={"vec": np.ones(4)}))
