import pytest

from logvec.models.collection import CollectionDescriptor, wal_channel_name
from logvec.models.errors import EmptyRingError
from logvec.models.schema import Schema
from logvec.models.timestamps import HlcTimestamp
from logvec.nodes.hash_ring import HashRing, shard_of


def _ring(*loggers):
    ring = HashRing(buckets=64, vnodes=16)
    for logger_id in loggers:
        ring.add_logger(logger_id)
    return ring


def _collection(cid=1, shards=4):
    return CollectionDescriptor(cid, f"c{cid}", Schema(vector_fields=[("vec", 2)]), shards, HlcTimestamp(1))


def test_empty_ring_raises():
    with pytest.raises(EmptyRingError):
        HashRing().owner_of_bucket(0)


def test_membership_is_idempotent():
    ring = _ring("logger-1")
    assert not ring.add_logger("logger-1")
    assert ring.remove_logger("logger-1")
    assert not ring.remove_logger("logger-1")
    assert ring.loggers == []


def test_single_logger_owns_everything():
    ring = _ring("logger-1")
    assert set(ring.assignments().values()) == {"logger-1"}


def test_adding_a_logger_only_moves_buckets_to_it():
    ring = _ring("logger-1", "logger-2", "logger-3")
    before = ring.assignments()
    ring.add_logger("logger-4")
    after = ring.assignments()
    moved = [b for b in before if before[b] != after[b]]
    assert moved
    assert all(after[b] == "logger-4" for b in moved)


def test_removing_a_logger_only_moves_its_buckets():
    ring = _ring("logger-1", "logger-2", "logger-3")
    before = ring.assignments()
    ring.remove_logger("logger-2")
    after = ring.assignments()
    for b, owner in before.items():
        if owner != "logger-2":
            assert after[b] == owner
        else:
            assert after[b] != "logger-2"


def test_assignment_is_deterministic():
    assert _ring("a", "b", "c").assignments() == _ring("c", "b", "a").assignments()


def test_shard_of_is_stable_and_in_range():
    for pk in [0, 1, 17, "doc-3", -5]:
        shard = shard_of(pk, 4)
        assert 0 <= shard < 4
        assert shard_of(pk, 4) == shard


def test_route_uses_collection_channel():
    ring = _ring("logger-1", "logger-2")
    collection = _collection()
    route = ring.route(42, collection)
    assert route.channel == wal_channel_name(1, route.shard_id)
    assert route.logger_id == ring.owner_of_shard(1, route.shard_id)


def test_shards_of_covers_every_shard_once():
    ring = _ring("logger-1", "logger-2", "logger-3")
    collections = [_collection(1, 4), _collection(2, 3)]
    owned = [pair for lid in ring.loggers for pair in ring.shards_of(lid, collections)]
    assert sorted(owned) == [(1, s) for s in range(4)] + [(2, s) for s in range(3)]


def test_ring_needs_buckets():
    with pytest.raises(ValueError):
        HashRing(buckets=0)
