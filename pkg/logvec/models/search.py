"""
Module: search.py

Role of this file
-----------------
Read-path messages: what a client asks (SearchRequest), what a segment or a
query node answers (PartialResult) and what the proxy returns (SearchResult).

A request may carry several query vectors; every result type therefore holds
one hit list per query vector, in request order.

Who uses this file
------------------
- nodes/proxy.py builds requests, reduces partials into a SearchResult.
- nodes/query_node.py answers with PartialResult.
- cli/wire.py converts both ends to line-delimited JSON.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from logvec.models.schema import PrimaryKey
from logvec.models.timestamps import HlcTimestamp
from logvec.utils.vector_math import Metric


@dataclass
class SearchRequest:
    collection: str
    vectors: np.ndarray
    k: int
    metric: Metric = Metric.EUCLIDEAN
    # staleness tolerance in ms; 0 = strong, inf = eventual
    tau_ms: float = math.inf
    filter: Optional[str] = None
    travel_ts: Optional[HlcTimestamp] = None
    vector_field: Optional[str] = None
    issue_ts: Optional[HlcTimestamp] = None
    request_id: int = 0

    def __post_init__(self) -> None:
        m = np.asarray(self.vectors, dtype=np.float32)
        self.vectors = m.reshape(1, -1) if m.ndim == 1 else m
        self.metric = Metric.parse(self.metric)
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.tau_ms < 0 or math.isnan(self.tau_ms):
            raise ValueError(f"tau must be >= 0, got {self.tau_ms}")
        if self.vectors.shape[0] == 0:
            raise ValueError("search request needs at least one query vector")

    @property
    def nq(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def batch_key(self) -> tuple:
        """Requests sharing this key can be served as one batch."""
        return (self.collection, self.metric.value)


@dataclass(frozen=True)
class Hit:
    pk: PrimaryKey
    score: float
    segment_id: int = -1

    def to_dict(self) -> Dict[str, Any]:
        return {"pk": self.pk, "score": self.score}


@dataclass
class PartialResult:
    source: str
    hits: List[List[Hit]]
    rows_scanned: int = 0
    # sealed and growing segment ids searched, channels whose growing data was searched
    segments: List[int] = field(default_factory=list)
    channels: List[str] = field(default_factory=list)


@dataclass
class SearchResult:
    hits: List[List[Hit]]
    waited_ms: float = 0.0
    issue_ts: Optional[HlcTimestamp] = None
    nodes: List[str] = field(default_factory=list)
    # rows scanned per query node, input of the simulator cost model
    rows_scanned: Dict[str, int] = field(default_factory=dict)

    @property
    def first(self) -> List[Hit]:
        return self.hits[0] if self.hits else []

    def pks(self, query: int = 0) -> List[PrimaryKey]:
        return [h.pk for h in self.hits[query]]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "hits": [h.to_dict() for h in self.first],
            "waited_ms": self.waited_ms,
        }


def hits_from_arrays(pks: Sequence[PrimaryKey], scores: Sequence[float], segment_id: int) -> List[Hit]:
    return [Hit(pk, float(s), segment_id) for pk, s in zip(pks, scores)]
