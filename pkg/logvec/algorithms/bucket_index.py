"""
Module: bucket_index.py

Role of this file
-----------------
Disk-oriented vector index. Vectors are SQ8-compressed and packed into
buckets that each fit one block (4 KB by default); only the bucket centers
stay in memory.

Build, per replica r (seed + r):
    every row starts in one cluster; any cluster whose encoded size exceeds
    the block is split with 2-means, recursively, until every cluster fits.
    A split that cannot separate its rows (identical vectors) falls back to
    cutting the cluster in two halves in row order.

Search:
    stage 1 picks the nprobe centers closest to the query over all replicas;
    stage 2 reads those buckets (one aligned block each), decodes the codes,
    scores them, keeps the best score per row and returns the top k.

Object layout (one object per index, `<prefix>/buckets`):
    header blocks: magic "MBK1", u32 cap, u32 replicas, u32 buckets, u32 dim,
                   u32 header blocks, codec mins/maxs (f32), zero padded
    bucket blocks: u16 member count, then (i64 row id, dim code bytes) per
                   member, zero padded to the block size
Center table (`<prefix>/centers`): u32 count, u32 dim, centers (f32),
replica of every center (u32).

Who uses this file
------------------
- sim/workload.py (SSD index experiments) and cli `bench buckets`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from loguru import logger

from logvec.algorithms.kmeans import kmeans
from logvec.algorithms.segment_index import IndexParams, SegmentIndex
from logvec.algorithms.sq8 import Sq8Codec
from logvec.algorithms.topk import select_topk
from logvec.models import rules
from logvec.models.errors import ConfigurationError, IndexBuildError
from logvec.storage.object_store import ObjectStore
from logvec.utils.constants import BUCKET_MAGIC
from logvec.utils.vector_math import Metric, scores

_HEAD = struct.Struct("<4sIIIII")
_COUNT = struct.Struct("<H")
_ROW = struct.Struct("<q")
_U32 = struct.Struct("<I")

SPLIT_MAX_ITERS = 10


def member_bytes(dim: int) -> int:
    return rules.BUCKET_ROW_ID_BYTES + dim


def members_per_bucket(dim: int, cap_bytes: int) -> int:
    """Most members one block can hold (count header included)."""
    return (cap_bytes - rules.BUCKET_COUNT_BYTES) // member_bytes(dim)


def bucket_byte_size(count: int, dim: int) -> int:
    return rules.BUCKET_COUNT_BYTES + count * member_bytes(dim)


@dataclass
class Bucket:
    bucket_id: int
    replica: int
    center: np.ndarray
    row_ids: np.ndarray

    @property
    def count(self) -> int:
        return int(self.row_ids.shape[0])


# ---------------------------------------------------------------------------
# Hierarchical clustering with a size cap
# ---------------------------------------------------------------------------

def split_to_cap(vectors: np.ndarray, max_members: int, seed: int) -> List[np.ndarray]:
    """Row-id groups, each at most `max_members` long, covering every row once."""
    pending: List[np.ndarray] = [np.arange(vectors.shape[0], dtype=np.int64)]
    done: List[np.ndarray] = []
    step = 0
    while pending:
        rows = pending.pop()
        if rows.shape[0] <= max_members:
            if rows.shape[0]:
                done.append(rows)
            continue
        result = kmeans(vectors[rows], 2, max_iters=SPLIT_MAX_ITERS, seed=seed * 1_000_003 + step)
        step += 1
        left = rows[result.labels == 0]
        right = rows[result.labels == 1]
        if left.shape[0] == 0 or right.shape[0] == 0:
            half = rows.shape[0] // 2
            left, right = rows[:half], rows[half:]
        # right first so that left is processed (and emitted) first
        pending.append(right)
        pending.append(left)
    return done


# ---------------------------------------------------------------------------
# Index
# ---------------------------------------------------------------------------

class BucketIndex:
    def __init__(
        self,
        store: ObjectStore,
        prefix: str,
        cap_bytes: int,
        replicas: int,
        dim: int,
        codec: Sq8Codec,
        centers: np.ndarray,
        center_replicas: np.ndarray,
        header_blocks: int,
        metric: Metric,
        center_hnsw_min_centers: int = rules.CENTER_HNSW_MIN_CENTERS,
    ) -> None:
        self.store = store
        self.prefix = prefix.rstrip("/")
        self.cap_bytes = cap_bytes
        self.replicas = replicas
        self.dim = dim
        self.codec = codec
        self.centers = np.asarray(centers, dtype=np.float32)
        self.center_replicas = np.asarray(center_replicas, dtype=np.int64)
        self.header_blocks = header_blocks
        self.metric = metric
        self.bytes_read = 0
        kind = "hnsw" if self.bucket_count >= center_hnsw_min_centers else "flat"
        self.center_index = SegmentIndex.build(IndexParams(kind=kind, metric=metric.value), self.centers)

    @property
    def data_key(self) -> str:
        return f"{self.prefix}/buckets"

    @property
    def centers_key(self) -> str:
        return f"{self.prefix}/centers"

    @property
    def bucket_count(self) -> int:
        return int(self.centers.shape[0])

    def bucket_offset(self, bucket_id: int) -> int:
        return (self.header_blocks + bucket_id) * self.cap_bytes

    # ------------------------------------------------------------------
    # Build
    # ------------------------------------------------------------------

    @classmethod
    def build(
        cls,
        store: ObjectStore,
        prefix: str,
        vectors: np.ndarray,
        cap_bytes: int = rules.BUCKET_CAP_BYTES,
        replicas: int = 1,
        seed: int = rules.DEFAULT_SEED,
        metric: Metric = Metric.EUCLIDEAN,
        center_hnsw_min_centers: int = rules.CENTER_HNSW_MIN_CENTERS,
    ) -> "BucketIndex":
        data = np.asarray(vectors, dtype=np.float32)
        if data.ndim != 2 or data.shape[0] == 0:
            raise IndexBuildError("bucket index needs a non-empty 2-d array")
        if replicas < 1:
            raise ConfigurationError("replicas must be >= 1")
        n, dim = data.shape
        max_members = members_per_bucket(dim, cap_bytes)
        if max_members < 1:
            raise ConfigurationError(
                f"one encoded vector ({member_bytes(dim)} bytes) does not fit a {cap_bytes}-byte bucket"
            )

        codec = Sq8Codec.train(data)
        codes = codec.encode(data)
        header = _HEAD.size + len(codec.to_bytes())
        header_blocks = -(-header // cap_bytes)

        buckets: List[Bucket] = []
        for r in range(replicas):
            for rows in split_to_cap(data, max_members, seed + r):
                buckets.append(Bucket(len(buckets), r, data[rows].mean(axis=0), rows))

        blob = bytearray(
            _HEAD.pack(BUCKET_MAGIC, cap_bytes, replicas, len(buckets), dim, header_blocks) + codec.to_bytes()
        )
        blob.extend(b"\x00" * (header_blocks * cap_bytes - len(blob)))
        for b in buckets:
            block = bytearray(_COUNT.pack(b.count))
            for row in b.row_ids:
                block.extend(_ROW.pack(int(row)))
                block.extend(codes[row].tobytes())
            block.extend(b"\x00" * (cap_bytes - len(block)))
            blob.extend(block)

        centers = np.stack([b.center for b in buckets]).astype(np.float32)
        center_replicas = np.asarray([b.replica for b in buckets], dtype=np.int64)
        index = cls(
            store, prefix, cap_bytes, replicas, dim, codec, centers, center_replicas,
            header_blocks, metric, center_hnsw_min_centers,
        )
        store.put(index.data_key, bytes(blob))
        store.put(index.centers_key, index._centers_bytes())
        logger.info(f"bucket index {prefix}: {n} rows, {replicas} replica(s), {len(buckets)} buckets")
        return index

    def _centers_bytes(self) -> bytes:
        return b"".join([
            _U32.pack(self.bucket_count) + _U32.pack(self.dim),
            self.centers.astype("<f4").tobytes(),
            self.center_replicas.astype("<u4").tobytes(),
        ])

    @classmethod
    def open(
        cls,
        store: ObjectStore,
        prefix: str,
        metric: Metric = Metric.EUCLIDEAN,
        center_hnsw_min_centers: int = rules.CENTER_HNSW_MIN_CENTERS,
    ) -> "BucketIndex":
        prefix = prefix.rstrip("/")
        head = store.read_range(f"{prefix}/buckets", 0, _HEAD.size)
        magic, cap, replicas, count, dim, header_blocks = _HEAD.unpack(head)
        if magic != BUCKET_MAGIC:
            raise IndexBuildError(f"bad bucket magic {magic!r}")
        codec = Sq8Codec.from_bytes(store.read_range(f"{prefix}/buckets", _HEAD.size, 8 * dim), dim)
        raw = store.get(f"{prefix}/centers")
        n, cdim = struct.unpack_from("<II", raw, 0)
        centers = np.frombuffer(raw, dtype="<f4", count=n * cdim, offset=8).reshape(n, cdim)
        reps = np.frombuffer(raw, dtype="<u4", count=n, offset=8 + 4 * n * cdim)
        if n != count:
            raise IndexBuildError(f"center table holds {n} centers, bucket file {count}")
        return cls(store, prefix, cap, replicas, dim, codec, centers, reps, header_blocks, metric, center_hnsw_min_centers)

    # ------------------------------------------------------------------
    # Reads
    # ------------------------------------------------------------------

    def read_bucket(self, bucket_id: int) -> Tuple[np.ndarray, np.ndarray]:
        """(row ids, codes) of one bucket, one aligned block read."""
        block = self.store.read_range(self.data_key, self.bucket_offset(bucket_id), self.cap_bytes)
        self.bytes_read += len(block)
        count, = _COUNT.unpack_from(block, 0)
        stride = member_bytes(self.dim)
        body = np.frombuffer(block, dtype=np.uint8, count=count * stride, offset=_COUNT.size).reshape(count, stride)
        row_ids = body[:, : rules.BUCKET_ROW_ID_BYTES].copy().view("<i8").reshape(-1).astype(np.int64)
        codes = body[:, rules.BUCKET_ROW_ID_BYTES:].copy()
        return row_ids, codes

    def bucket_members(self) -> Dict[int, np.ndarray]:
        return {b: self.read_bucket(b)[0] for b in range(self.bucket_count)}

    def select_buckets(self, query: np.ndarray, nprobe: int) -> np.ndarray:
        nprobe = max(1, min(int(nprobe), self.bucket_count))
        ids, _ = self.center_index.search(np.asarray(query, dtype=np.float32).reshape(-1), nprobe)
        return ids

    def search(self, query: np.ndarray, nprobe: int, k: int) -> Tuple[np.ndarray, np.ndarray]:
        q = np.asarray(query, dtype=np.float32).reshape(-1)
        best: Dict[int, float] = {}
        higher = self.metric.higher_is_closer
        for b in self.select_buckets(q, nprobe):
            rows, codes = self.read_bucket(int(b))
            if rows.shape[0] == 0:
                continue
            values = scores(self.metric, self.codec.decode(codes), q)
            for row, value in zip(rows.tolist(), values.tolist()):
                current = best.get(row)
                if current is None or (value > current if higher else value < current):
                    best[row] = value
        if not best:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float64)
        ids = np.fromiter(best.keys(), dtype=np.int64, count=len(best))
        vals = np.fromiter(best.values(), dtype=np.float64, count=len(best))
        return select_topk(ids, vals, self.metric, k)


def build_buckets(
    store: ObjectStore,
    prefix: str,
    vectors: np.ndarray,
    bucket_cap_bytes: int = rules.BUCKET_CAP_BYTES,
    replicas: int = 1,
    seed: int = rules.DEFAULT_SEED,
    metric: Metric = Metric.EUCLIDEAN,
) -> BucketIndex:
    return BucketIndex.build(store, prefix, vectors, bucket_cap_bytes, replicas, seed, metric)


def search_two_stage(index: BucketIndex, query: np.ndarray, nprobe_buckets: int, k: int) -> Tuple[np.ndarray, np.ndarray]:
    return index.search(query, nprobe_buckets, k)
