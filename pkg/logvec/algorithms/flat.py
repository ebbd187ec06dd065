from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from logvec.algorithms.topk import select_topk
from logvec.utils.vector_math import Metric, scores


def live_mask(deleted: Optional[np.ndarray], n: int) -> np.ndarray:
    """True = live, for rows [0, n). A shorter deletion mask is padded with live rows."""
    if deleted is None:
        return np.ones(n, dtype=bool)
    d = np.asarray(deleted, dtype=bool)[:n]
    if d.shape[0] < n:
        d = np.concatenate([d, np.zeros(n - d.shape[0], dtype=bool)])
    return ~d


def exact_search(
    vectors: np.ndarray,
    query: np.ndarray,
    metric: Metric,
    k: int,
    deleted: Optional[np.ndarray] = None,
    row_ids: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Brute-force top-k over `vectors` (optionally a subset given by `row_ids`)."""
    if row_ids is None:
        row_ids = np.arange(vectors.shape[0], dtype=np.int64)
    else:
        row_ids = np.asarray(row_ids, dtype=np.int64)
    if deleted is not None and row_ids.shape[0]:
        row_ids = row_ids[live_mask(deleted, vectors.shape[0])[row_ids]]
    if row_ids.shape[0] == 0:
        return row_ids, np.zeros(0, dtype=np.float64)
    values = scores(metric, vectors[row_ids], query)
    return select_topk(row_ids, values, metric, k)


class FlatIndex:
    kind = "flat"

    def __init__(self, vectors: np.ndarray, metric: Metric) -> None:
        self.vectors = np.asarray(vectors, dtype=np.float32)
        self.metric = metric

    def __len__(self) -> int:
        return int(self.vectors.shape[0])

    def search(self, query: np.ndarray, k: int, deleted: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        return exact_search(self.vectors, query, self.metric, k, deleted)
