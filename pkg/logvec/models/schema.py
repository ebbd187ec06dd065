"""
Module: schema.py

Role of this file
-----------------
Collection schema and entity model. Pure data plus validation, no I/O.

A schema has exactly one primary key (integer or string, optionally
auto-assigned), one or more vector fields, and any number of label (string)
and numeric fields. Labels and numerics are only used for filtering.

Field ids are assigned in declaration order starting at FIRST_USER_FIELD_ID:
primary key first, then vectors, labels, numerics. Binlog files are keyed by
these ids.

Who uses this file
------------------
- nodes/wal_logger.py: validate_entity() before anything is logged.
- storage/binlog.py: one binlog file per FieldDef.
- algorithms/filtering.py: type-checks filter expressions against the schema.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Union

import numpy as np

from logvec.models.errors import SchemaError
from logvec.models.timestamps import HlcTimestamp
from logvec.utils.constants import FIRST_USER_FIELD_ID

PrimaryKey = Union[int, str]


class DataType(Enum):
    INT64 = "int64"
    VARCHAR = "varchar"
    FLOAT = "float"
    FLOAT_VECTOR = "float_vector"


class FieldRole(Enum):
    PRIMARY_KEY = "primary_key"
    VECTOR = "vector"
    LABEL = "label"
    NUMERIC = "numeric"


@dataclass(frozen=True)
class FieldDef:
    name: str
    dtype: DataType
    role: FieldRole
    dim: int = 0
    field_id: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "dtype": self.dtype.value,
            "role": self.role.value,
            "dim": self.dim,
            "field_id": self.field_id,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FieldDef":
        return cls(
            name=str(data["name"]),
            dtype=DataType(data["dtype"]),
            role=FieldRole(data["role"]),
            dim=int(data.get("dim", 0)),
            field_id=int(data.get("field_id", 0)),
        )


class Schema:
    """
    Collection schema.

    Build it with the keyword constructor; field ids are assigned here and
    the schema is checked immediately (SchemaError on any problem).
    """

    def __init__(
        self,
        vector_fields: List[tuple],
        primary_key: str = "pk",
        pk_type: DataType = DataType.INT64,
        auto_id: bool = False,
        label_fields: Optional[List[str]] = None,
        numeric_fields: Optional[List[tuple]] = None,
    ) -> None:
        next_id = FIRST_USER_FIELD_ID
        if pk_type not in (DataType.INT64, DataType.VARCHAR):
            raise SchemaError("primary key must be int64 or varchar")
        if auto_id and pk_type is not DataType.INT64:
            raise SchemaError("auto-assigned primary keys are integers")

        self.auto_id = bool(auto_id)
        self.primary_key = FieldDef(primary_key, pk_type, FieldRole.PRIMARY_KEY, field_id=next_id)
        next_id += 1

        self.vector_fields: List[FieldDef] = []
        for spec in vector_fields:
            name, dim = spec[0], int(spec[1])
            if dim < 1:
                raise SchemaError(f"vector field '{name}' must have dimension >= 1")
            self.vector_fields.append(
                FieldDef(name, DataType.FLOAT_VECTOR, FieldRole.VECTOR, dim=dim, field_id=next_id)
            )
            next_id += 1
        if not self.vector_fields:
            raise SchemaError("schema needs at least one vector field")

        self.label_fields: List[FieldDef] = []
        for name in label_fields or []:
            self.label_fields.append(FieldDef(name, DataType.VARCHAR, FieldRole.LABEL, field_id=next_id))
            next_id += 1

        self.numeric_fields: List[FieldDef] = []
        for spec in numeric_fields or []:
            if isinstance(spec, str):
                name, dtype = spec, DataType.FLOAT
            else:
                name, dtype = spec[0], DataType(spec[1]) if not isinstance(spec[1], DataType) else spec[1]
            if dtype not in (DataType.INT64, DataType.FLOAT):
                raise SchemaError(f"numeric field '{name}' must be int64 or float")
            self.numeric_fields.append(FieldDef(name, dtype, FieldRole.NUMERIC, field_id=next_id))
            next_id += 1

        names = [f.name for f in self.all_fields()]
        if len(set(names)) != len(names):
            raise SchemaError(f"field names must be unique: {names}")

    # ------------------------------------------------------------------
    # Lookups
    # ------------------------------------------------------------------

    def all_fields(self) -> List[FieldDef]:
        return [self.primary_key, *self.vector_fields, *self.label_fields, *self.numeric_fields]

    def get_field(self, name: str) -> Optional[FieldDef]:
        for f in self.all_fields():
            if f.name == name:
                return f
        return None

    def vector_field(self, name: Optional[str] = None) -> FieldDef:
        if name is None:
            return self.vector_fields[0]
        for f in self.vector_fields:
            if f.name == name:
                return f
        raise SchemaError(f"unknown vector field '{name}'")

    # ------------------------------------------------------------------
    # Serialization
    # ------------------------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        return {
            "primary_key": self.primary_key.name,
            "pk_type": self.primary_key.dtype.value,
            "auto_id": self.auto_id,
            "vector_fields": [[f.name, f.dim] for f in self.vector_fields],
            "label_fields": [f.name for f in self.label_fields],
            "numeric_fields": [[f.name, f.dtype.value] for f in self.numeric_fields],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Schema":
        return cls(
            vector_fields=[tuple(v) for v in data["vector_fields"]],
            primary_key=data.get("primary_key", "pk"),
            pk_type=DataType(data.get("pk_type", DataType.INT64.value)),
            auto_id=bool(data.get("auto_id", False)),
            label_fields=list(data.get("label_fields", [])),
            numeric_fields=[tuple(v) for v in data.get("numeric_fields", [])],
        )

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Schema) and self.to_dict() == other.to_dict()

    def __repr__(self) -> str:
        return f"Schema({self.to_dict()!r})"


# ---------------------------------------------------------------------------
# Entities
# ---------------------------------------------------------------------------

@dataclass
class Entity:
    """
    One row of a collection. `lsn` is assigned by the logger, exactly once.
    """

    pk: Optional[PrimaryKey]
    vectors: Dict[str, np.ndarray]
    labels: Dict[str, str] = field(default_factory=dict)
    numerics: Dict[str, Union[int, float]] = field(default_factory=dict)
    lsn: Optional[HlcTimestamp] = None

    def __post_init__(self) -> None:
        self.vectors = {k: np.asarray(v, dtype=np.float32).reshape(-1) for k, v in self.vectors.items()}

    def with_lsn(self, lsn: HlcTimestamp, pk: Optional[PrimaryKey] = None) -> "Entity":
        if self.lsn is not None:
            raise ValueError(f"entity already has an LSN ({self.lsn})")
        return Entity(
            pk=self.pk if pk is None else pk,
            vectors=dict(self.vectors),
            labels=dict(self.labels),
            numerics=dict(self.numerics),
            lsn=lsn,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "pk": self.pk,
            "vectors": {k: [float(x) for x in v] for k, v in self.vectors.items()},
            "labels": dict(self.labels),
            "numerics": dict(self.numerics),
            "lsn": None if self.lsn is None else self.lsn.encode(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Entity":
        lsn = data.get("lsn")
        return cls(
            pk=data.get("pk"),
            vectors={k: np.asarray(v, dtype=np.float32) for k, v in data.get("vectors", {}).items()},
            labels={k: str(v) for k, v in data.get("labels", {}).items()},
            numerics=dict(data.get("numerics", {})),
            lsn=None if lsn is None else HlcTimestamp.decode(int(lsn)),
        )

    def same_content(self, other: "Entity") -> bool:
        if self.pk != other.pk or self.labels != other.labels or self.numerics != other.numerics:
            return False
        if self.vectors.keys() != other.vectors.keys():
            return False
        return all(np.array_equal(self.vectors[k], other.vectors[k]) for k in self.vectors)


def row_bytes(schema: Schema, entity: Entity) -> int:
    """Approximate in-memory/binlog footprint of one row."""
    size = 8  # lsn
    if isinstance(entity.pk, str):
        size += 4 + len(entity.pk.encode("utf-8"))
    else:
        size += 8
    for f in schema.vector_fields:
        size += 4 * f.dim
    for f in schema.label_fields:
        size += 4 + len(str(entity.labels.get(f.name, "")).encode("utf-8"))
    size += 8 * len(schema.numeric_fields)
    return size


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass
class SchemaViolation:
    code: str
    message: str
    fields_involved: List[str]


@dataclass
class ValidationResult:
    violations: List[SchemaViolation]
    auto_pk: bool = False

    @property
    def ok(self) -> bool:
        return not self.violations


def _is_int(v: Any) -> bool:
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def _is_number(v: Any) -> bool:
    return (_is_int(v) or isinstance(v, (float, np.floating))) and not isinstance(v, bool)


def validate_entity(schema: Schema, entity: Entity) -> ValidationResult:
    """
    Collect every schema violation of `entity`. Violations are data, the
    function never raises for a bad entity.
    """
    violations: List[SchemaViolation] = []
    auto_pk = False

    # 1) Primary key
    pk_field = schema.primary_key
    if entity.pk is None:
        if schema.auto_id:
            auto_pk = True
        else:
            violations.append(
                SchemaViolation("MISSING_PK", f"missing primary key '{pk_field.name}'", [pk_field.name])
            )
    elif schema.auto_id:
        violations.append(
            SchemaViolation(
                "WRONG_TYPE",
                f"primary key '{pk_field.name}' is auto-assigned and must not be provided",
                [pk_field.name],
            )
        )
    elif pk_field.dtype is DataType.INT64 and not _is_int(entity.pk):
        violations.append(SchemaViolation("WRONG_TYPE", f"primary key must be an integer, got {entity.pk!r}", [pk_field.name]))
    elif pk_field.dtype is DataType.VARCHAR and not isinstance(entity.pk, str):
        violations.append(SchemaViolation("WRONG_TYPE", f"primary key must be a string, got {entity.pk!r}", [pk_field.name]))

    # 2) Vectors
    for f in schema.vector_fields:
        vec = entity.vectors.get(f.name)
        if vec is None:
            violations.append(SchemaViolation("MISSING_FIELD", f"missing vector field '{f.name}'", [f.name]))
            continue
        if vec.shape[0] != f.dim:
            violations.append(
                SchemaViolation(
                    "DIMENSION_MISMATCH",
                    f"dimension mismatch on '{f.name}': expected {f.dim}, got {vec.shape[0]}",
                    [f.name],
                )
            )
        elif not np.all(np.isfinite(vec)):
            violations.append(SchemaViolation("WRONG_TYPE", f"vector field '{f.name}' has non-finite values", [f.name]))

    # 3) Labels
    for f in schema.label_fields:
        if f.name not in entity.labels:
            violations.append(SchemaViolation("MISSING_FIELD", f"missing label field '{f.name}'", [f.name]))
        elif not isinstance(entity.labels[f.name], str):
            violations.append(SchemaViolation("WRONG_TYPE", f"label field '{f.name}' must be a string", [f.name]))

    # 4) Numerics
    for f in schema.numeric_fields:
        if f.name not in entity.numerics:
            violations.append(SchemaViolation("MISSING_FIELD", f"missing numeric field '{f.name}'", [f.name]))
            continue
        v = entity.numerics[f.name]
        if f.dtype is DataType.INT64 and not _is_int(v):
            violations.append(SchemaViolation("WRONG_TYPE", f"numeric field '{f.name}' must be an integer", [f.name]))
        elif f.dtype is DataType.FLOAT and not _is_number(v):
            violations.append(SchemaViolation("WRONG_TYPE", f"numeric field '{f.name}' must be a number", [f.name]))

    # 5) Unknown fields
    known_vectors = {f.name for f in schema.vector_fields}
    known_labels = {f.name for f in schema.label_fields}
    known_numerics = {f.name for f in schema.numeric_fields}
    for name in sorted(set(entity.vectors) - known_vectors):
        violations.append(SchemaViolation("UNKNOWN_FIELD", f"unknown vector field '{name}'", [name]))
    for name in sorted(set(entity.labels) - known_labels):
        violations.append(SchemaViolation("UNKNOWN_FIELD", f"unknown label field '{name}'", [name]))
    for name in sorted(set(entity.numerics) - known_numerics):
        violations.append(SchemaViolation("UNKNOWN_FIELD", f"unknown numeric field '{name}'", [name]))

    return ValidationResult(violations=violations, auto_pk=auto_pk)
