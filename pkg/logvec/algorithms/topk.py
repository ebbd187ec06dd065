"""
Top-k selection and merging.

Ordering is always "closer first" under the metric, ties broken by the
smaller row id (inside a segment) or the smaller primary key (across
segments), so every stage of the two-phase reduce is deterministic.
"""

from __future__ import annotations

from typing import Dict, Iterable, List, Tuple

import numpy as np

from logvec.models.schema import PrimaryKey
from logvec.models.search import Hit
from logvec.utils.vector_math import Metric, score_key, sort_keys


def select_topk(row_ids: np.ndarray, values: np.ndarray, metric: Metric, k: int) -> Tuple[np.ndarray, np.ndarray]:
    row_ids = np.asarray(row_ids, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    if row_ids.shape[0] == 0 or k <= 0:
        return row_ids[:0], values[:0]
    order = np.lexsort((row_ids, sort_keys(metric, values)))[:k]
    return row_ids[order], values[order]


def hit_order(metric: Metric, hit: Hit) -> Tuple[float, PrimaryKey]:
    return (score_key(metric, hit.score), hit.pk)


def merge_hits(lists: Iterable[List[Hit]], metric: Metric, k: int, dedup: bool = True) -> List[Hit]:
    """
    Merge sorted hit lists into one top-k list. With dedup, a pk reported more
    than once keeps only its best-scored hit.
    """
    if not dedup:
        merged = [h for hits in lists for h in hits]
        merged.sort(key=lambda h: hit_order(metric, h))
        return merged[:k]
    best: Dict[PrimaryKey, Hit] = {}
    for hits in lists:
        for h in hits:
            current = best.get(h.pk)
            if current is None or score_key(metric, h.score) < score_key(metric, current.score):
                best[h.pk] = h
    ordered = sorted(best.values(), key=lambda h: hit_order(metric, h))
    return ordered[:k]
