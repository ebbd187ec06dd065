"""
Module: segment_index.py

Role of this file
-----------------
One interface over the three index kinds a segment can carry (FLAT, IVF-Flat
with optional SQ8, HNSW), plus the parameters that select and tune them.

An index is built over the vector column of one segment and searched with a
delete mask over the same rows. FLAT is always available: a sealed segment
whose index has not been built (or failed) is searched exactly.

Who uses this file
------------------
- nodes/index_node.py builds and persists indexes for sealed segments.
- nodes/segment_buffer.py builds temporary IVF indexes over full slices.
- nodes/query_node.py loads and searches them (via segment_search.py).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from loguru import logger

from logvec.algorithms.flat import FlatIndex
from logvec.algorithms.hnsw import HnswIndex
from logvec.algorithms.ivf import IvfFlatIndex
from logvec.models import rules
from logvec.models.errors import IndexBuildError
from logvec.utils.vector_math import Metric

INDEX_KINDS = ("flat", "ivf_flat", "hnsw")
QUANTIZATIONS = ("none", "sq8")

AnyIndex = Union[FlatIndex, IvfFlatIndex, HnswIndex]


@dataclass(frozen=True)
class IndexParams:
    kind: str = "flat"
    metric: str = Metric.EUCLIDEAN.value
    nlist: int = rules.IVF_NLIST
    nprobe: int = rules.IVF_NPROBE
    m: int = rules.HNSW_M
    ef_construction: int = rules.HNSW_EF_CONSTRUCTION
    ef_search: int = rules.HNSW_EF_SEARCH
    quantization: str = "none"
    max_iters: int = rules.KMEANS_MAX_ITERS
    seed: int = rules.DEFAULT_SEED

    def __post_init__(self) -> None:
        if self.kind not in INDEX_KINDS:
            raise IndexBuildError(f"unknown index kind {self.kind!r}")
        if self.quantization not in QUANTIZATIONS:
            raise IndexBuildError(f"unknown quantization {self.quantization!r}")
        if self.quantization == "sq8" and self.kind != "ivf_flat":
            raise IndexBuildError("SQ8 quantization is only available for ivf_flat")
        if not 1 <= self.nprobe <= self.nlist:
            raise IndexBuildError(f"need 1 <= nprobe <= nlist, got nprobe={self.nprobe}, nlist={self.nlist}")
        if self.m < 2:
            raise IndexBuildError("HNSW needs M >= 2")
        if self.ef_search < 1 or self.ef_construction < 1:
            raise IndexBuildError("ef values must be positive")
        Metric.parse(self.metric)

    @property
    def metric_enum(self) -> Metric:
        return Metric.parse(self.metric)

    def ef_for(self, k: int) -> int:
        """ef_search, raised to k when k is larger."""
        return max(self.ef_search, k)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "IndexParams":
        data = dict(data or {})
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        if "metric" in known:
            known["metric"] = Metric.parse(known["metric"]).value
        return cls(**known)

    @classmethod
    def from_settings(cls, settings: Any, metric: Union[str, Metric] = Metric.EUCLIDEAN) -> "IndexParams":
        """From config.IndexSettings."""
        return cls(
            kind=settings.kind,
            metric=Metric.parse(metric).value,
            nlist=settings.nlist,
            nprobe=settings.nprobe,
            m=settings.m,
            ef_construction=settings.ef_construction,
            ef_search=settings.ef_search,
            quantization=settings.quantization,
            max_iters=settings.kmeans_max_iters,
            seed=settings.seed,
        )


class SegmentIndex:
    def __init__(self, params: IndexParams, index: AnyIndex) -> None:
        self.params = params
        self.index = index

    @property
    def kind(self) -> str:
        return self.index.kind

    @property
    def metric(self) -> Metric:
        return self.index.metric

    def __len__(self) -> int:
        return len(self.index)

    @classmethod
    def build(cls, params: IndexParams, vectors: np.ndarray) -> "SegmentIndex":
        data = np.asarray(vectors, dtype=np.float32)
        metric = params.metric_enum
        if params.kind == "flat" or data.shape[0] == 0:
            return cls(params, FlatIndex(data, metric))
        if params.kind == "ivf_flat":
            # a small segment cannot hold nlist clusters
            nlist = min(params.nlist, data.shape[0])
            index: AnyIndex = IvfFlatIndex.build(
                data, nlist, metric, max_iters=params.max_iters, seed=params.seed, quantization=params.quantization
            )
            return cls(params, index)
        return cls(params, HnswIndex.build(data, metric, params.m, params.ef_construction, params.seed))

    def search(
        self, query: np.ndarray, k: int, deleted: Optional[np.ndarray] = None
    ) -> Tuple[np.ndarray, np.ndarray]:
        if isinstance(self.index, IvfFlatIndex):
            return self.index.search(query, self.params.nprobe, k, deleted)
        if isinstance(self.index, HnswIndex):
            return self.index.search(query, k, self.params.ef_for(k), deleted)
        return self.index.search(query, k, deleted)


def build_temp_index(
    slice_vectors: np.ndarray,
    nlist: int = rules.TEMP_INDEX_NLIST,
    metric: Metric = Metric.EUCLIDEAN,
    nprobe: Optional[int] = None,
) -> SegmentIndex:
    """
    Light IVF-Flat over one full slice of a growing segment. nprobe defaults
    to nlist, so a temporary index answers exactly like a scan of its slice.
    """
    data = np.asarray(slice_vectors, dtype=np.float32)
    nlist = max(1, min(nlist, data.shape[0]))
    nprobe = nlist if nprobe is None else max(1, min(nprobe, nlist))
    params = IndexParams(kind="ivf_flat", metric=metric.value, nlist=nlist, nprobe=nprobe)
    index = SegmentIndex.build(params, data)
    logger.debug(f"temporary slice index built over {data.shape[0]} rows (nlist={nlist})")
    return index
