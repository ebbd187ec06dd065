"""
Module: segment_buffer.py

Role of this file
-----------------
In-memory growing segment, fed by WAL inserts in WAL order.

Rows are grouped in fixed-size slices. When a slice fills up it is frozen
into columns and (on query nodes) gets a temporary IVF index so that a
growing segment is not scanned row by row. The open slice is always scanned.

The same buffer serves two owners:
- data nodes keep the rows until the segment is sealed, plus the deletes
  that reached the segment while it was growing;
- query nodes search it (with temporary indexes) until the sealed copy is
  loaded somewhere, and mark deleted rows in a bitmap.
"""

from __future__ import annotations

from typing import Dict, List, Optional, Tuple

import numpy as np

from logvec.algorithms.bitmap import DeleteBitmap
from logvec.algorithms.flat import exact_search, live_mask
from logvec.algorithms.segment_index import SegmentIndex, build_temp_index
from logvec.algorithms.topk import select_topk
from logvec.models import rules
from logvec.models.columns import SegmentColumns
from logvec.models.errors import SegmentSealedError
from logvec.models.schema import Entity, PrimaryKey, Schema, row_bytes
from logvec.models.segment import SealTrigger, SegmentDescriptor
from logvec.models.timestamps import HlcTimestamp
from logvec.utils.vector_math import Metric


class GrowingSegmentBuffer:
    def __init__(
        self,
        descriptor: SegmentDescriptor,
        schema: Schema,
        slice_rows: int = rules.SLICE_ROWS,
        temp_index_nlist: Optional[int] = None,
        temp_index_nprobe: Optional[int] = None,
        metric: Metric = Metric.EUCLIDEAN,
    ) -> None:
        self.descriptor = descriptor
        self.schema = schema
        self.slice_rows = slice_rows
        # None disables temporary indexes (data nodes)
        self.temp_index_nlist = temp_index_nlist
        self.temp_index_nprobe = temp_index_nprobe
        self.metric = metric

        self.slices: List[SegmentColumns] = []
        self.temp_indexes: List[Dict[str, SegmentIndex]] = []
        self.open_rows: List[Entity] = []
        self.bitmap = DeleteBitmap(descriptor.segment_id)
        self.pk_rows: Dict[PrimaryKey, List[int]] = {}
        self.last_insert: Optional[HlcTimestamp] = None
        # data node: deletes seen while growing, as (pk, ts, wal offset)
        self.pending_deletes: List[Tuple[PrimaryKey, HlcTimestamp, int]] = []
        self.start_offset: Optional[int] = None

    @property
    def segment_id(self) -> int:
        return self.descriptor.segment_id

    @property
    def row_count(self) -> int:
        return len(self.slices) * self.slice_rows + len(self.open_rows)

    def __len__(self) -> int:
        return self.row_count

    # ------------------------------------------------------------------
    # WAL application
    # ------------------------------------------------------------------

    def append(self, entity: Entity, offset: Optional[int] = None) -> None:
        if self.descriptor.is_sealed:
            raise SegmentSealedError(f"segment {self.segment_id} is sealed")
        if entity.lsn is None:
            raise ValueError("growing segments only take logged entities")
        row = self.row_count
        self.descriptor.record_rows(1, row_bytes(self.schema, entity))
        self.descriptor.advance_progress(entity.lsn)
        self.open_rows.append(entity)
        self.pk_rows.setdefault(entity.pk, []).append(row)
        self.last_insert = entity.lsn
        if self.start_offset is None and offset is not None:
            self.start_offset = offset
        if len(self.open_rows) >= self.slice_rows:
            self._close_slice()

    def _close_slice(self) -> None:
        columns = SegmentColumns.from_entities(self.schema, self.open_rows)
        self.slices.append(columns)
        self.open_rows = []
        self.descriptor.slice_count = len(self.slices)
        indexes: Dict[str, SegmentIndex] = {}
        if self.temp_index_nlist is not None:
            for f in self.schema.vector_fields:
                indexes[f.name] = build_temp_index(
                    columns.vectors[f.name], self.temp_index_nlist, self.metric, self.temp_index_nprobe
                )
        self.temp_indexes.append(indexes)

    def record_delete(self, pk: PrimaryKey, ts: HlcTimestamp, offset: int) -> None:
        """Data-node side: remember a delete until the segment is sealed."""
        self.pending_deletes.append((pk, ts, offset))

    def apply_delete(self, pk: PrimaryKey, ts: HlcTimestamp) -> int:
        """Query-node side: mark rows of pk written before ts. Returns rows newly deleted."""
        hit = 0
        for row in self.pk_rows.get(pk, []):
            if self.row_lsn(row) < ts and self.bitmap.set(row):
                hit += 1
        return hit

    def seal_trigger_after_insert(self, seal_rows: int, seal_bytes: int) -> Optional[SealTrigger]:
        return rules.size_seal_trigger(
            self.descriptor.row_count, self.descriptor.byte_size, seal_rows, seal_bytes
        )

    # ------------------------------------------------------------------
    # Access
    # ------------------------------------------------------------------

    def row_lsn(self, row: int) -> HlcTimestamp:
        s, r = divmod(row, self.slice_rows)
        if s < len(self.slices):
            return self.slices[s].lsn(r)
        lsn = self.open_rows[r].lsn
        assert lsn is not None
        return lsn

    def columns(self) -> SegmentColumns:
        open_cols = SegmentColumns.from_entities(self.schema, self.open_rows)
        return SegmentColumns.concat(self.schema, [*self.slices, open_cols])

    # ------------------------------------------------------------------
    # Search
    # ------------------------------------------------------------------

    def search(
        self,
        query: np.ndarray,
        metric: Metric,
        k: int,
        vector_field: Optional[str] = None,
        filter_mask: Optional[np.ndarray] = None,
    ) -> Tuple[np.ndarray, np.ndarray, int]:
        """(row ids, scores, rows scanned). Row ids index into columns()."""
        name = self.schema.vector_field(vector_field).name
        n = self.row_count
        excluded = ~live_mask(self.bitmap.mask, n)
        if filter_mask is not None:
            excluded |= ~np.asarray(filter_mask, dtype=bool)[:n]

        all_rows: List[np.ndarray] = []
        all_values: List[np.ndarray] = []
        scanned = 0
        for i, cols in enumerate(self.slices):
            base = i * self.slice_rows
            local_excluded = excluded[base:base + self.slice_rows]
            index = self.temp_indexes[i].get(name)
            if index is not None and index.metric is metric:
                rows, values = index.search(query, k, local_excluded)
                scanned += self._probed_rows(index, query)
            else:
                rows, values = exact_search(cols.vectors[name], query, metric, k, local_excluded)
                scanned += len(cols)
            all_rows.append(rows + base)
            all_values.append(values)

        if self.open_rows:
            base = len(self.slices) * self.slice_rows
            vectors = np.stack([e.vectors[name] for e in self.open_rows])
            rows, values = exact_search(vectors, query, metric, k, excluded[base:])
            scanned += len(self.open_rows)
            all_rows.append(rows + base)
            all_values.append(values)

        if not all_rows:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float64), 0
        top_rows, top_values = select_topk(np.concatenate(all_rows), np.concatenate(all_values), metric, k)
        return top_rows, top_values, scanned

    @staticmethod
    def _probed_rows(index: SegmentIndex, query: np.ndarray) -> int:
        ivf = index.index
        probe = ivf.probe_order(query)[: index.params.nprobe]
        return int(sum(ivf.lists[c].shape[0] for c in probe))

    def describe(self) -> str:
        return (
            f"growing segment {self.segment_id}: {self.row_count} rows, "
            f"{len(self.slices)} full slices, {self.bitmap.deleted_count} deleted"
        )
