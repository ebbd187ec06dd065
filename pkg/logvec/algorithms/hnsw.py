"""
Module: hnsw.py

Role of this file
-----------------
Hierarchical navigable small-world graph over the rows of one segment.

Layer 0 holds every row; a row reaches upper layers with geometrically
decreasing probability (level multiplier 1/ln M). Inserts descend greedily
to their top layer, then run an ef_construction beam search on every layer
below and connect to the neighbors chosen by the diversity heuristic (a
candidate is skipped when it is closer to an already selected neighbor than
to the new row; skipped candidates fill any remaining slots). Degree is
capped at M on upper layers and 2M on layer 0.

Searches descend greedily to layer 0 and run an ef_search beam there.
Deleted rows are traversed like any other node and only filtered from the
results; if that leaves fewer than k hits the beam is widened and retried.
A beam as wide as the graph degenerates to an exact scan.

Node ids are row ids. Vectors stay in the segment; the index only keeps the
graph (see index_io.py for the persisted form).
"""

from __future__ import annotations

import heapq
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from logvec.algorithms.flat import exact_search, live_mask
from logvec.algorithms.topk import select_topk
from logvec.models.errors import IndexBuildError
from logvec.models.rules import DEFAULT_SEED, HNSW_EF_CONSTRUCTION, HNSW_EF_SEARCH, HNSW_M
from logvec.utils.vector_math import Metric, scores, sort_keys

Layer = Dict[int, List[int]]


class HnswIndex:
    kind = "hnsw"

    def __init__(
        self,
        vectors: np.ndarray,
        metric: Metric,
        m: int = HNSW_M,
        ef_construction: int = HNSW_EF_CONSTRUCTION,
        seed: int = DEFAULT_SEED,
    ) -> None:
        if m < 2:
            raise IndexBuildError("HNSW needs M >= 2")
        self.vectors = np.asarray(vectors, dtype=np.float32)
        self.metric = metric
        self.m = int(m)
        self.m0 = 2 * int(m)
        self.ef_construction = int(ef_construction)
        self.seed = int(seed)
        self._level_mult = 1.0 / math.log(self.m)
        self._rng = np.random.default_rng(seed)
        self.layers: List[Layer] = []
        self.levels: List[int] = []
        self.entry_point: Optional[int] = None

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def max_level(self) -> int:
        return len(self.layers) - 1

    # ------------------------------------------------------------------
    # Distances (smaller key = closer, whatever the metric)
    # ------------------------------------------------------------------

    def _keys(self, q: np.ndarray, ids: Sequence[int]) -> np.ndarray:
        return sort_keys(self.metric, scores(self.metric, self.vectors[np.asarray(ids, dtype=np.int64)], q))

    def _key(self, q: np.ndarray, node: int) -> float:
        return float(self._keys(q, [node])[0])

    # ------------------------------------------------------------------
    # Graph search
    # ------------------------------------------------------------------

    def _search_layer(self, q: np.ndarray, entry: List[Tuple[float, int]], layer: Layer, ef: int) -> List[Tuple[float, int]]:
        visited = {p for _, p in entry}
        candidates = list(entry)
        heapq.heapify(candidates)
        found = [(-d, p) for d, p in entry]
        heapq.heapify(found)
        while found and len(found) > ef:
            heapq.heappop(found)

        while candidates:
            d, current = heapq.heappop(candidates)
            if len(found) >= ef and d > -found[0][0]:
                break
            fresh = [p for p in layer.get(current, ()) if p not in visited]
            if not fresh:
                continue
            visited.update(fresh)
            for p, dp in zip(fresh, self._keys(q, fresh).tolist()):
                if len(found) < ef or dp < -found[0][0]:
                    heapq.heappush(candidates, (dp, p))
                    heapq.heappush(found, (-dp, p))
                    if len(found) > ef:
                        heapq.heappop(found)
        return sorted((-nd, p) for nd, p in found)

    def _greedy(self, q: np.ndarray, entry: int, top: int, bottom: int) -> Tuple[float, int]:
        """Descend from layer `top` to layer `bottom + 1` keeping one closest node."""
        best = (self._key(q, entry), entry)
        for level in range(top, bottom, -1):
            best = self._search_layer(q, [best], self.layers[level], 1)[0]
        return best

    def _select_neighbors(self, candidates: List[Tuple[float, int]], max_size: int) -> List[int]:
        if len(candidates) <= max_size:
            return [p for _, p in candidates]
        selected: List[int] = []
        skipped: List[int] = []
        for d, p in candidates:
            if len(selected) >= max_size:
                break
            if selected:
                to_selected = self._keys(self.vectors[p], selected)
                if (to_selected < d).any():
                    skipped.append(p)
                    continue
            selected.append(p)
        for p in skipped:
            if len(selected) >= max_size:
                break
            selected.append(p)
        return selected

    # ------------------------------------------------------------------
    # Build
    # ------------------------------------------------------------------

    def _draw_level(self) -> int:
        return int(-math.log(1.0 - self._rng.random()) * self._level_mult)

    def _insert(self, node: int) -> None:
        level = self._draw_level()
        self.levels.append(level)
        q = self.vectors[node]

        if self.entry_point is None:
            self.layers = [{node: []} for _ in range(level + 1)]
            self.entry_point = node
            return

        top = self.max_level
        if level < top:
            d, ep = self._greedy(q, self.entry_point, top, level)
        else:
            d, ep = self._key(q, self.entry_point), self.entry_point
        entry = [(d, ep)]

        for lvl in range(min(level, top), -1, -1):
            layer = self.layers[lvl]
            found = self._search_layer(q, entry, layer, self.ef_construction)
            cap = self.m0 if lvl == 0 else self.m
            neighbors = self._select_neighbors(found, self.m)
            layer[node] = list(neighbors)
            for nb in neighbors:
                links = layer[nb]
                links.append(node)
                if len(links) > cap:
                    keys = self._keys(self.vectors[nb], links)
                    ranked = sorted(zip(keys.tolist(), links))
                    layer[nb] = self._select_neighbors(ranked, cap)
            entry = found

        for _ in range(top + 1, level + 1):
            self.layers.append({node: []})
        if level > top:
            self.entry_point = node

    @classmethod
    def build(
        cls,
        vectors: np.ndarray,
        metric: Metric,
        m: int = HNSW_M,
        ef_construction: int = HNSW_EF_CONSTRUCTION,
        seed: int = DEFAULT_SEED,
    ) -> "HnswIndex":
        index = cls(vectors, metric, m, ef_construction, seed)
        for node in range(index.vectors.shape[0]):
            index._insert(node)
        return index

    # ------------------------------------------------------------------
    # Search
    # ------------------------------------------------------------------

    def search(
        self, query: np.ndarray, k: int, ef: int = HNSW_EF_SEARCH, deleted: Optional[np.ndarray] = None
    ) -> Tuple[np.ndarray, np.ndarray]:
        n = len(self)
        if n == 0 or self.entry_point is None:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float64)
        q = np.asarray(query, dtype=np.float32).reshape(-1)
        ef = max(int(ef), int(k))
        alive = live_mask(deleted, n)

        while True:
            if ef >= n:
                return exact_search(self.vectors[:n], q, self.metric, k, None if deleted is None else ~alive)
            best = self._greedy(q, self.entry_point, self.max_level, 0)
            found = self._search_layer(q, [best], self.layers[0], ef)
            ids = np.asarray([p for _, p in found if alive[p]], dtype=np.int64)
            if ids.shape[0] >= k:
                values = scores(self.metric, self.vectors[ids], q)
                return select_topk(ids, values, self.metric, k)
            ef = min(n, ef * 2)

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------

    def degree_ok(self) -> bool:
        for lvl, layer in enumerate(self.layers):
            cap = self.m0 if lvl == 0 else self.m
            if any(len(links) > cap for links in layer.values()):
                return False
        return True

    def reachable_from_entry(self) -> int:
        """Number of layer-0 nodes reachable from the entry point."""
        if self.entry_point is None:
            return 0
        seen = {self.entry_point}
        stack = [self.entry_point]
        layer = self.layers[0]
        while stack:
            for p in layer.get(stack.pop(), ()):
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return len(seen)


def build_hnsw(vectors: np.ndarray, m: int, ef_construction: int, metric: Metric = Metric.EUCLIDEAN, seed: int = DEFAULT_SEED) -> HnswIndex:
    return HnswIndex.build(vectors, metric, m, ef_construction, seed)


def search_hnsw(index: HnswIndex, query: np.ndarray, ef_search: int, k: int, bitmap=None) -> Tuple[np.ndarray, np.ndarray]:
    return index.search(query, k, ef_search, None if bitmap is None else bitmap.mask)
