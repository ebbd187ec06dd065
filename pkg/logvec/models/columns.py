"""
Column-oriented rows of one segment.

The WAL is row based (one Entity per insert); everything downstream of the
data node (binlogs, loaded segments, merges, snapshots) works on columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence

import numpy as np

from logvec.models.schema import DataType, Entity, PrimaryKey, Schema
from logvec.models.timestamps import HlcTimestamp


def _numeric_dtype(dtype: DataType) -> Any:
    return np.int64 if dtype is DataType.INT64 else np.float64


@dataclass
class SegmentColumns:
    pks: List[PrimaryKey]
    lsns: np.ndarray
    vectors: Dict[str, np.ndarray] = field(default_factory=dict)
    labels: Dict[str, List[str]] = field(default_factory=dict)
    numerics: Dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.pks)

    # ------------------------------------------------------------------
    # Construction
    # ------------------------------------------------------------------

    @classmethod
    def empty(cls, schema: Schema) -> "SegmentColumns":
        return cls(
            pks=[],
            lsns=np.zeros(0, dtype=np.uint64),
            vectors={f.name: np.zeros((0, f.dim), dtype=np.float32) for f in schema.vector_fields},
            labels={f.name: [] for f in schema.label_fields},
            numerics={f.name: np.zeros(0, dtype=_numeric_dtype(f.dtype)) for f in schema.numeric_fields},
        )

    @classmethod
    def from_entities(cls, schema: Schema, entities: Sequence[Entity]) -> "SegmentColumns":
        if not entities:
            return cls.empty(schema)
        lsns = []
        for e in entities:
            if e.lsn is None:
                raise ValueError(f"entity {e.pk!r} has no LSN")
            lsns.append(e.lsn.encode())
        return cls(
            pks=[e.pk for e in entities],
            lsns=np.asarray(lsns, dtype=np.uint64),
            vectors={
                f.name: np.stack([e.vectors[f.name] for e in entities]).astype(np.float32)
                for f in schema.vector_fields
            },
            labels={f.name: [str(e.labels[f.name]) for e in entities] for f in schema.label_fields},
            numerics={
                f.name: np.asarray([e.numerics[f.name] for e in entities], dtype=_numeric_dtype(f.dtype))
                for f in schema.numeric_fields
            },
        )

    @classmethod
    def concat(cls, schema: Schema, parts: Sequence["SegmentColumns"]) -> "SegmentColumns":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty(schema)
        return cls(
            pks=[pk for p in parts for pk in p.pks],
            lsns=np.concatenate([p.lsns for p in parts]).astype(np.uint64),
            vectors={f.name: np.concatenate([p.vectors[f.name] for p in parts]) for f in schema.vector_fields},
            labels={f.name: [v for p in parts for v in p.labels[f.name]] for f in schema.label_fields},
            numerics={f.name: np.concatenate([p.numerics[f.name] for p in parts]) for f in schema.numeric_fields},
        )

    # ------------------------------------------------------------------
    # Access
    # ------------------------------------------------------------------

    def lsn(self, row: int) -> HlcTimestamp:
        return HlcTimestamp.decode(int(self.lsns[row]))

    def entity(self, row: int) -> Entity:
        return Entity(
            pk=self.pks[row],
            vectors={name: m[row] for name, m in self.vectors.items()},
            labels={name: col[row] for name, col in self.labels.items()},
            numerics={name: col[row].item() for name, col in self.numerics.items()},
            lsn=self.lsn(row),
        )

    def entities(self) -> List[Entity]:
        return [self.entity(i) for i in range(len(self))]

    def take(self, rows: Sequence[int] | np.ndarray) -> "SegmentColumns":
        idx = np.asarray(rows, dtype=np.int64)
        return SegmentColumns(
            pks=[self.pks[i] for i in idx],
            lsns=self.lsns[idx],
            vectors={name: m[idx] for name, m in self.vectors.items()},
            labels={name: [col[i] for i in idx] for name, col in self.labels.items()},
            numerics={name: col[idx] for name, col in self.numerics.items()},
        )

    def filter_columns(self) -> Dict[str, np.ndarray]:
        """Label and numeric columns as arrays, the input of filter evaluation."""
        out: Dict[str, np.ndarray] = {name: np.asarray(col, dtype=object) for name, col in self.labels.items()}
        out.update(self.numerics)
        return out
