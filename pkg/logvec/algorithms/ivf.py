"""
Module: ivf.py

Role of this file
-----------------
Inverted-file index (IVF-Flat, optionally IVF-SQ8). k-means splits a
segment's vectors into `nlist` clusters; a query only scans the lists of its
`nprobe` closest centroids.

Every indexed row is in exactly one list. With nprobe == nlist every list is
scanned and the result equals an exact scan of the live rows.

Row vectors are not copied into the index: the index keeps row ids per list
and scores against the segment's vector column, or against the stored SQ8
codes when the index is quantized.
"""

from __future__ import annotations

from typing import List, Optional, Tuple

import numpy as np
from loguru import logger

from logvec.algorithms.flat import live_mask
from logvec.algorithms.kmeans import kmeans
from logvec.algorithms.sq8 import Sq8Codec
from logvec.algorithms.topk import select_topk
from logvec.models.errors import IndexBuildError
from logvec.models.rules import DEFAULT_SEED, KMEANS_MAX_ITERS
from logvec.utils.vector_math import Metric, scores, sort_keys


class IvfFlatIndex:
    kind = "ivf_flat"

    def __init__(
        self,
        centroids: np.ndarray,
        lists: List[np.ndarray],
        vectors: np.ndarray,
        metric: Metric,
        codec: Optional[Sq8Codec] = None,
        codes: Optional[np.ndarray] = None,
    ) -> None:
        self.centroids = np.asarray(centroids, dtype=np.float32)
        self.lists = [np.asarray(l, dtype=np.int64) for l in lists]
        self.vectors = np.asarray(vectors, dtype=np.float32)
        self.metric = metric
        self.codec = codec
        self.codes = codes

    @property
    def nlist(self) -> int:
        return int(self.centroids.shape[0])

    def __len__(self) -> int:
        return int(sum(l.shape[0] for l in self.lists))

    @classmethod
    def build(
        cls,
        vectors: np.ndarray,
        nlist: int,
        metric: Metric,
        max_iters: int = KMEANS_MAX_ITERS,
        seed: int = DEFAULT_SEED,
        quantization: str = "none",
    ) -> "IvfFlatIndex":
        data = np.asarray(vectors, dtype=np.float32)
        n = data.shape[0]
        if n == 0:
            raise IndexBuildError("cannot build IVF over an empty segment")
        if nlist > n:
            raise IndexBuildError(f"nlist {nlist} exceeds row count {n}")
        result = kmeans(data, nlist, max_iters=max_iters, seed=seed)
        order = np.argsort(result.labels, kind="stable")
        bounds = np.searchsorted(result.labels[order], np.arange(nlist + 1))
        lists = [order[bounds[c]:bounds[c + 1]] for c in range(nlist)]
        codec = codes = None
        if quantization == "sq8":
            codec = Sq8Codec.train(data)
            codes = codec.encode(data)
        logger.debug(f"IVF built: {n} rows, nlist={nlist}, {result.iterations} k-means iterations")
        return cls(result.centroids, lists, data, metric, codec, codes)

    def probe_order(self, query: np.ndarray) -> np.ndarray:
        """Centroid ids, closest first under the index metric (ties: lower id)."""
        keys = sort_keys(self.metric, scores(self.metric, self.centroids, query))
        return np.lexsort((np.arange(self.nlist), keys))

    def _row_vectors(self, rows: np.ndarray) -> np.ndarray:
        if self.codec is not None and self.codes is not None:
            return self.codec.decode(self.codes[rows])
        return self.vectors[rows]

    def search(
        self, query: np.ndarray, nprobe: int, k: int, deleted: Optional[np.ndarray] = None
    ) -> Tuple[np.ndarray, np.ndarray]:
        nprobe = max(1, min(int(nprobe), self.nlist))
        probe = self.probe_order(query)[:nprobe]
        rows = np.concatenate([self.lists[c] for c in probe]) if probe.shape[0] else np.zeros(0, dtype=np.int64)
        if deleted is not None and rows.shape[0]:
            rows = rows[live_mask(deleted, self.vectors.shape[0])[rows]]
        if rows.shape[0] == 0:
            return rows, np.zeros(0, dtype=np.float64)
        values = scores(self.metric, self._row_vectors(rows), query)
        return select_topk(rows, values, self.metric, k)


def build_ivf(vectors: np.ndarray, nlist: int, max_iters: int = KMEANS_MAX_ITERS, metric: Metric = Metric.EUCLIDEAN, seed: int = DEFAULT_SEED) -> IvfFlatIndex:
    return IvfFlatIndex.build(vectors, nlist, metric, max_iters=max_iters, seed=seed)


def search_ivf(index: IvfFlatIndex, query: np.ndarray, nprobe: int, k: int, bitmap=None) -> Tuple[np.ndarray, np.ndarray]:
    return index.search(query, nprobe, k, None if bitmap is None else bitmap.mask)
