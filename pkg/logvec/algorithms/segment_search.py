"""
Module: segment_search.py

Role of this file
-----------------
Segment-wise top-k: the first stage of the two-phase reduce.

A segment is searched through its index when the index was built for the
requested metric, exactly otherwise. Deleted rows never appear in a result.
A filter is applied after the vector search: the index is asked for
k * oversample candidates, non-matching rows are dropped, and the request is
doubled until k rows match or the index has nothing more to give. Exact
search applies the filter as a mask directly.

Who uses this file
------------------
- nodes/query_node.py for sealed and growing segments.
- storage/timetravel.py for snapshot search.
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np

from logvec.algorithms.flat import exact_search, live_mask
from logvec.algorithms.segment_index import SegmentIndex
from logvec.models import rules
from logvec.models.schema import PrimaryKey
from logvec.models.search import Hit
from logvec.utils.vector_math import Metric


def search_rows(
    vectors: np.ndarray,
    query: np.ndarray,
    metric: Metric,
    k: int,
    index: Optional[SegmentIndex] = None,
    deleted: Optional[np.ndarray] = None,
    filter_mask: Optional[np.ndarray] = None,
    oversample: int = rules.FILTER_OVERSAMPLE,
) -> Tuple[np.ndarray, np.ndarray]:
    n = int(vectors.shape[0])
    if n == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float64)

    if index is None or index.metric is not metric or len(index) < n:
        excluded = ~live_mask(deleted, n)
        if filter_mask is not None:
            excluded |= ~np.asarray(filter_mask, dtype=bool)[:n]
        return exact_search(vectors, query, metric, k, excluded)

    if filter_mask is None:
        return index.search(query, k, deleted)

    matches = np.asarray(filter_mask, dtype=bool)
    want = k * max(1, oversample)
    while True:
        rows, values = index.search(query, want, deleted)
        keep = matches[rows]
        if int(keep.sum()) >= k or rows.shape[0] < want or want >= n:
            return rows[keep][:k], values[keep][:k]
        want = min(n, want * 2)


def segment_search(
    pks: Sequence[PrimaryKey],
    vectors: np.ndarray,
    query: np.ndarray,
    metric: Metric,
    k: int,
    segment_id: int,
    index: Optional[SegmentIndex] = None,
    deleted: Optional[np.ndarray] = None,
    filter_mask: Optional[np.ndarray] = None,
    oversample: int = rules.FILTER_OVERSAMPLE,
) -> List[Hit]:
    rows, values = search_rows(vectors, query, metric, k, index, deleted, filter_mask, oversample)
    return [Hit(pks[int(r)], float(s), segment_id) for r, s in zip(rows, values)]
