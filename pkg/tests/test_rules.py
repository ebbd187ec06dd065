import math

from logvec.models.rules import (
    AUTOSCALE_HIGH_MS,
    AUTOSCALE_LOW_MS,
    BUCKET_CAP_BYTES,
    REBUILD_THRESHOLD,
    autoscale_target,
    guard_allows,
    is_balanced,
    is_inactive,
    select_merge_candidates,
    should_rebuild_fraction,
    size_seal_trigger,
)
from logvec.models.segment import SealTrigger, SegmentDescriptor, SegmentState
from logvec.models.timestamps import HlcTimestamp


def _sealed(sid, shard, rows, retired=False):
    d = SegmentDescriptor(sid, 1, shard, f"wal/1/shard-{shard}", state=SegmentState.SEALED, row_count=rows)
    if retired:
        d.retired_ts = HlcTimestamp(5)
    return d


def test_documented_defaults():
    assert AUTOSCALE_LOW_MS == 100.0
    assert AUTOSCALE_HIGH_MS == 150.0
    assert BUCKET_CAP_BYTES == 4096
    assert REBUILD_THRESHOLD == 0.2


def test_size_seal_trigger_on_rows_or_bytes():
    assert size_seal_trigger(10, 10, seal_rows=10, seal_bytes=1000) is SealTrigger.SIZE
    assert size_seal_trigger(1, 1000, seal_rows=10, seal_bytes=1000) is SealTrigger.SIZE
    assert size_seal_trigger(9, 999, seal_rows=10, seal_bytes=1000) is None


def test_is_inactive():
    assert not is_inactive(None, HlcTimestamp(10_000), 100)
    assert is_inactive(HlcTimestamp(1000), HlcTimestamp(1100), 100)
    assert not is_inactive(HlcTimestamp(1000), HlcTimestamp(1099), 100)


def test_guard_infinite_tau_never_waits():
    assert guard_allows(HlcTimestamp(5000), None, math.inf)


def test_guard_without_tick_waits():
    assert not guard_allows(HlcTimestamp(5000), None, 100)


def test_guard_equality_waits():
    assert not guard_allows(HlcTimestamp(1100), HlcTimestamp(1000), 100)
    assert guard_allows(HlcTimestamp(1099), HlcTimestamp(1000), 100)


def test_guard_strong_needs_newer_tick():
    issue = HlcTimestamp(1000, 3)
    assert not guard_allows(issue, HlcTimestamp(1000, 9), 0)
    assert guard_allows(issue, HlcTimestamp(1001, 0), 0)


def test_should_rebuild_fraction():
    assert not should_rebuild_fraction(0, 100)
    assert not should_rebuild_fraction(19, 100)
    assert should_rebuild_fraction(20, 100)
    assert not should_rebuild_fraction(5, 0)


def test_select_merge_candidates_per_shard():
    segs = [_sealed(i, 0, 10) for i in range(1, 5)] + [_sealed(10, 1, 10), _sealed(11, 1, 10)]
    picked = select_merge_candidates(segs, seal_rows=100, min_segments=4, small_fraction=0.25)
    assert list(picked) == [0]
    assert [d.segment_id for d in picked[0]] == [1, 2, 3, 4]


def test_select_merge_candidates_ignores_large_and_retired():
    segs = [_sealed(1, 0, 10), _sealed(2, 0, 10), _sealed(3, 0, 50), _sealed(4, 0, 10, retired=True)]
    assert select_merge_candidates(segs, seal_rows=100, min_segments=3) == {}


def test_autoscale_target_band():
    assert autoscale_target(50, 4) == 2
    assert autoscale_target(50, 1) == 1
    assert autoscale_target(120, 4) == 4
    assert autoscale_target(200, 4) == 8
    assert autoscale_target(200, 12, max_nodes=16) == 16


def test_is_balanced():
    assert is_balanced({"a": 100})
    assert is_balanced({"a": 100, "b": 80}, ratio=1.5)
    assert not is_balanced({"a": 100, "b": 50}, ratio=1.5)
    assert not is_balanced({"a": 100, "b": 0})
    assert is_balanced({"a": 0, "b": 0})
