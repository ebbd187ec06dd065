"""
Module: binlog.py

Role of this file
-----------------
Columnar persisted form of a sealed segment: one binlog object per field.

File layout (little-endian):

    header: magic "MBL1" | u16 version | u64 collection_id | u64 segment_id
            | u32 field_id | u64 row_count | u64 min_lsn | u64 max_lsn
    body:   float vectors  -> row_count * dim float32
            int64 fields   -> row_count int64
            float fields   -> row_count float64
            the LSN column -> row_count u64 (encoded HLC timestamps)
            strings        -> per row: u32 byte length | UTF-8 bytes

Rows are in WAL order and that order is the same in every file of a segment.
The header carries no type information; the reader gets it from the schema.

Who uses this file
------------------
- nodes/data_node.py: segment_to_binlogs() when a segment seals or merges.
- nodes/index_node.py: reads only the vector field file.
- nodes/query_node.py, storage/timetravel.py: load_segment_columns().
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np

from logvec.models.columns import SegmentColumns
from logvec.models.errors import StorageError
from logvec.models.schema import DataType, FieldDef, Schema
from logvec.storage.object_store import ObjectStore, segment_key
from logvec.utils.constants import BINLOG_MAGIC, BINLOG_VERSION, LSN_FIELD_ID

HEADER = struct.Struct("<4sHQQIQQQ")
_U32 = struct.Struct("<I")


@dataclass(frozen=True)
class BinlogHeader:
    collection_id: int
    segment_id: int
    field_id: int
    row_count: int
    min_lsn: int
    max_lsn: int
    version: int = BINLOG_VERSION

    def pack(self) -> bytes:
        return HEADER.pack(
            BINLOG_MAGIC,
            self.version,
            self.collection_id,
            self.segment_id,
            self.field_id,
            self.row_count,
            self.min_lsn,
            self.max_lsn,
        )

    @classmethod
    def unpack(cls, data: bytes) -> "BinlogHeader":
        if len(data) < HEADER.size:
            raise StorageError("binlog shorter than its header")
        magic, version, cid, sid, fid, rows, lo, hi = HEADER.unpack_from(data, 0)
        if magic != BINLOG_MAGIC:
            raise StorageError(f"bad binlog magic {magic!r}")
        if version != BINLOG_VERSION:
            raise StorageError(f"unsupported binlog version {version}")
        return cls(cid, sid, fid, rows, lo, hi, version)


@dataclass
class BinlogFile:
    header: BinlogHeader
    values: Any


# ---------------------------------------------------------------------------
# Single field
# ---------------------------------------------------------------------------

def _encode_body(dtype: Optional[DataType], values: Any) -> bytes:
    if dtype is None:
        return np.asarray(values, dtype="<u8").tobytes()
    if dtype is DataType.FLOAT_VECTOR:
        return np.ascontiguousarray(values, dtype="<f4").tobytes()
    if dtype is DataType.INT64:
        return np.asarray(values, dtype="<i8").tobytes()
    if dtype is DataType.FLOAT:
        return np.asarray(values, dtype="<f8").tobytes()
    parts: List[bytes] = []
    for v in values:
        raw = str(v).encode("utf-8")
        parts.append(_U32.pack(len(raw)))
        parts.append(raw)
    return b"".join(parts)


def _decode_body(dtype: Optional[DataType], body: bytes, rows: int, dim: int) -> Any:
    if dtype is None:
        return np.frombuffer(body, dtype="<u8", count=rows).astype(np.uint64)
    if dtype is DataType.FLOAT_VECTOR:
        return np.frombuffer(body, dtype="<f4", count=rows * dim).reshape(rows, dim).astype(np.float32)
    if dtype is DataType.INT64:
        return np.frombuffer(body, dtype="<i8", count=rows).astype(np.int64)
    if dtype is DataType.FLOAT:
        return np.frombuffer(body, dtype="<f8", count=rows).astype(np.float64)
    out: List[str] = []
    pos = 0
    for _ in range(rows):
        (n,) = _U32.unpack_from(body, pos)
        pos += _U32.size
        out.append(body[pos:pos + n].decode("utf-8"))
        pos += n
    return out


def encode_binlog(header: BinlogHeader, field: Optional[FieldDef], values: Any) -> bytes:
    """`field` None means the LSN column."""
    return header.pack() + _encode_body(None if field is None else field.dtype, values)


def decode_binlog(data: bytes, field: Optional[FieldDef]) -> BinlogFile:
    header = BinlogHeader.unpack(data)
    expected = LSN_FIELD_ID if field is None else field.field_id
    if header.field_id != expected:
        raise StorageError(f"binlog holds field {header.field_id}, expected {expected}")
    dim = field.dim if field is not None else 0
    values = _decode_body(None if field is None else field.dtype, data[HEADER.size:], header.row_count, dim)
    return BinlogFile(header, values)


# ---------------------------------------------------------------------------
# Whole segment
# ---------------------------------------------------------------------------

def binlog_key(collection_id: int, segment_id: int, field_id: int) -> str:
    return segment_key(collection_id, segment_id, f"binlog/{field_id}")


def _field_values(columns: SegmentColumns, field: FieldDef) -> Any:
    if field.dtype is DataType.FLOAT_VECTOR:
        return columns.vectors[field.name]
    if field.name in columns.labels:
        return columns.labels[field.name]
    if field.name in columns.numerics:
        return columns.numerics[field.name]
    return columns.pks


def segment_to_binlogs(
    schema: Schema, collection_id: int, segment_id: int, columns: SegmentColumns
) -> Dict[str, bytes]:
    """key -> bytes for every field plus the LSN column."""
    n = len(columns)
    lo = int(columns.lsns.min()) if n else 0
    hi = int(columns.lsns.max()) if n else 0
    out: Dict[str, bytes] = {}
    out[binlog_key(collection_id, segment_id, LSN_FIELD_ID)] = encode_binlog(
        BinlogHeader(collection_id, segment_id, LSN_FIELD_ID, n, lo, hi), None, columns.lsns
    )
    for field in schema.all_fields():
        header = BinlogHeader(collection_id, segment_id, field.field_id, n, lo, hi)
        out[binlog_key(collection_id, segment_id, field.field_id)] = encode_binlog(
            header, field, _field_values(columns, field)
        )
    return out


def read_field(store: ObjectStore, key: str, field: Optional[FieldDef]) -> BinlogFile:
    return decode_binlog(store.get(key), field)


def load_segment_columns(store: ObjectStore, schema: Schema, binlog_paths: Dict[str, str]) -> SegmentColumns:
    """Rebuild every column of a sealed segment from its binlog objects."""
    lsn = read_field(store, binlog_paths[str(LSN_FIELD_ID)], None).values
    pk_field = schema.primary_key
    pk_values = read_field(store, binlog_paths[str(pk_field.field_id)], pk_field).values
    pks = list(pk_values) if isinstance(pk_values, list) else [int(v) for v in pk_values]
    return SegmentColumns(
        pks=pks,
        lsns=lsn,
        vectors={f.name: read_field(store, binlog_paths[str(f.field_id)], f).values for f in schema.vector_fields},
        labels={f.name: read_field(store, binlog_paths[str(f.field_id)], f).values for f in schema.label_fields},
        numerics={f.name: read_field(store, binlog_paths[str(f.field_id)], f).values for f in schema.numeric_fields},
    )


def paths_by_field(keys: Dict[str, bytes]) -> Dict[str, str]:
    """field_id (as str) -> object key, the shape kept in SegmentDescriptor.binlog_paths."""
    return {key.rsplit("/", 1)[1]: key for key in keys}
