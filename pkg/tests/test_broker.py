import numpy as np
import pytest

from logvec.backbone.broker import LogBroker
from logvec.backbone.codec import decode_frames, encode_frame
from logvec.backbone.time_tick import TimeTickEmitter
from logvec.models.errors import ChannelOrderError, LogGapError, UnknownChannelError
from logvec.models.log_entry import EntryKind, LogEntry
from logvec.models.schema import Entity
from logvec.models.timestamps import HlcTimestamp, Tso
from logvec.utils.clock import VirtualClock


def _insert(ts, pk=1):
    return LogEntry.insert(HlcTimestamp(ts), 1, 7, Entity(pk=pk, vectors={"vec": np.arange(3)}))


def test_publish_and_read_in_order():
    broker = LogBroker()
    broker.create_channel("wal/1/shard-0")
    assert broker.publish("wal/1/shard-0", _insert(10, 1)) == 0
    assert broker.publish("wal/1/shard-0", LogEntry.delete(HlcTimestamp(11), 1, 7, 1)) == 1
    entries = broker.read("wal/1/shard-0")
    assert [o for o, _ in entries] == [0, 1]
    assert entries[0][1].entity().pk == 1
    assert entries[1][1].message_type == "delete"


def test_timestamps_must_increase_per_channel():
    broker = LogBroker()
    broker.create_channel("ddl")
    broker.publish("ddl", LogEntry.ddl(HlcTimestamp(10), "create_collection"))
    with pytest.raises(ChannelOrderError):
        broker.publish("ddl", LogEntry.ddl(HlcTimestamp(10), "drop_collection"))


def test_unknown_and_invalid_channels():
    broker = LogBroker()
    with pytest.raises(UnknownChannelError):
        broker.publish("missing", _insert(1))
    with pytest.raises(ValueError):
        broker.create_channel("../escape")


def test_subscription_tracks_offset_and_time_tick():
    broker = LogBroker()
    broker.create_channel("coord")
    sub = broker.subscribe("coord")
    broker.publish("coord", LogEntry.coord(HlcTimestamp(5), "segment_sealed", segment=3))
    broker.publish("coord", LogEntry.time_tick(HlcTimestamp(6)))
    assert sub.lag == 2
    batch = sub.poll()
    assert [e.kind for _, e in batch] == [EntryKind.COORD, EntryKind.TIME_TICK]
    assert batch[0][1].message_type == "segment_sealed"
    assert sub.last_time_tick == HlcTimestamp(6)
    assert sub.poll() == []
    assert sub.lag == 0


def test_subscription_resumes_from_offset():
    broker = LogBroker()
    broker.create_channel("c")
    for ts in range(1, 6):
        broker.publish("c", _insert(ts, ts))
    sub = broker.subscribe("c", from_offset=3)
    assert [o for o, _ in sub.poll(max_entries=1)] == [3]
    assert [o for o, _ in sub.poll()] == [4]


def test_truncated_offsets_raise_gap(tmp_path):
    broker = LogBroker(tmp_path)
    broker.create_channel("c")
    for ts in range(1, 6):
        broker.publish("c", _insert(ts, ts))
    assert broker.truncate("c", 3) == 3
    assert broker.base_offset("c") == 3
    with pytest.raises(LogGapError):
        broker.read("c", 0)
    assert [o for o, _ in broker.read("c", 3)] == [3, 4]


def test_channels_survive_reopen(tmp_path):
    broker = LogBroker(tmp_path)
    broker.create_channel("wal/2/shard-1")
    for ts in range(1, 4):
        broker.publish("wal/2/shard-1", _insert(ts, ts))
    broker.truncate("wal/2/shard-1", 1)
    broker.close()

    reopened = LogBroker(tmp_path)
    assert reopened.channel_names() == ["wal/2/shard-1"]
    assert reopened.base_offset("wal/2/shard-1") == 1
    assert reopened.end_offset("wal/2/shard-1") == 3
    assert reopened.max_timestamp() == HlcTimestamp(3)
    with pytest.raises(ChannelOrderError):
        reopened.publish("wal/2/shard-1", _insert(3))
    reopened.close()


def test_torn_tail_is_dropped(tmp_path):
    broker = LogBroker(tmp_path)
    broker.create_channel("c")
    broker.publish("c", _insert(1))
    broker.publish("c", _insert(2))
    broker.close()
    path = tmp_path / "log" / "c.mlog"
    data = path.read_bytes()
    path.write_bytes(data[:-3])

    reopened = LogBroker(tmp_path)
    assert reopened.end_offset("c") == 1
    reopened.publish("c", _insert(3))
    reopened.close()
    assert LogBroker(tmp_path).end_offset("c") == 2


def test_decode_frames_reports_valid_length():
    frames = encode_frame(_insert(1)) + encode_frame(_insert(2))
    entries, valid = decode_frames(frames + b"\x05\x00")
    assert len(entries) == 2
    assert valid == len(frames)


def test_time_tick_emitter_respects_interval():
    clock = VirtualClock(start_ms=1000)
    broker = LogBroker()
    tso = Tso(clock.now_ms)
    ticks = TimeTickEmitter(broker, tso, interval_ms=50, now_ms=clock.now_ms)
    seen = []
    ticks.register("wal/1/shard-0", hook=seen.append)
    ticks.register("wal/1/shard-1")

    first = ticks.maybe_emit()
    assert sorted(first) == ["wal/1/shard-0", "wal/1/shard-1"]
    assert seen == [first["wal/1/shard-0"]]
    clock.advance(49)
    assert ticks.maybe_emit() == {}
    clock.advance(1)
    assert len(ticks.maybe_emit()) == 2
    assert broker.end_offset("wal/1/shard-0") == 2
    assert all(e.is_tick for _, e in broker.read("wal/1/shard-1"))


def test_interval_must_be_positive():
    clock = VirtualClock()
    with pytest.raises(ValueError):
        TimeTickEmitter(LogBroker(), Tso(clock.now_ms), interval_ms=0, now_ms=clock.now_ms)
