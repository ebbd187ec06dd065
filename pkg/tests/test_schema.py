import numpy as np
import pytest

from logvec.models.columns import SegmentColumns
from logvec.models.errors import SchemaError
from logvec.models.schema import DataType, Entity, Schema, validate_entity
from logvec.models.timestamps import HlcTimestamp
from logvec.utils.constants import FIRST_USER_FIELD_ID


def _schema(**kwargs):
    return Schema(
        vector_fields=[("vec", 4)],
        label_fields=["color"],
        numeric_fields=["price", ("stock", "int64")],
        **kwargs,
    )


def _entity(pk=1, dim=4, **overrides):
    data = dict(
        pk=pk,
        vectors={"vec": np.ones(dim)},
        labels={"color": "red"},
        numerics={"price": 2.5, "stock": 3},
    )
    data.update(overrides)
    return Entity(**data)


def _codes(result):
    return [v.code for v in result.violations]


def test_field_ids_are_assigned_in_order():
    schema = _schema()
    ids = [f.field_id for f in schema.all_fields()]
    assert ids == list(range(FIRST_USER_FIELD_ID, FIRST_USER_FIELD_ID + 5))
    assert schema.get_field("stock").dtype is DataType.INT64
    assert schema.get_field("price").dtype is DataType.FLOAT


def test_schema_roundtrips_through_dict():
    schema = _schema()
    assert Schema.from_dict(schema.to_dict()) == schema


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(vector_fields=[]),
        dict(vector_fields=[("vec", 0)]),
        dict(vector_fields=[("vec", 4)], pk_type=DataType.FLOAT),
        dict(vector_fields=[("vec", 4)], pk_type=DataType.VARCHAR, auto_id=True),
        dict(vector_fields=[("vec", 4)], label_fields=["vec"]),
        dict(vector_fields=[("vec", 4)], numeric_fields=[("n", "varchar")]),
    ],
)
def test_invalid_schemas_raise(kwargs):
    with pytest.raises(SchemaError):
        Schema(**kwargs)


def test_unknown_vector_field_lookup_raises():
    with pytest.raises(SchemaError):
        _schema().vector_field("other")


def test_valid_entity_has_no_violations():
    assert validate_entity(_schema(), _entity()).ok


def test_missing_pk():
    assert _codes(validate_entity(_schema(), _entity(pk=None))) == ["MISSING_PK"]


def test_auto_id_accepts_missing_pk_and_rejects_given_one():
    schema = _schema(auto_id=True)
    result = validate_entity(schema, _entity(pk=None))
    assert result.ok and result.auto_pk
    assert _codes(validate_entity(schema, _entity(pk=5))) == ["WRONG_TYPE"]


def test_wrong_pk_type():
    assert _codes(validate_entity(_schema(), _entity(pk="a"))) == ["WRONG_TYPE"]
    assert _codes(validate_entity(_schema(), _entity(pk=True))) == ["WRONG_TYPE"]
    varchar = _schema(pk_type=DataType.VARCHAR)
    assert validate_entity(varchar, _entity(pk="a")).ok


def test_dimension_mismatch():
    result = validate_entity(_schema(), _entity(dim=3))
    assert _codes(result) == ["DIMENSION_MISMATCH"]
    assert result.violations[0].fields_involved == ["vec"]


def test_non_finite_vector():
    entity = _entity(vectors={"vec": [1.0, np.nan, 0.0, 0.0]})
    assert _codes(validate_entity(_schema(), entity)) == ["WRONG_TYPE"]


def test_missing_and_unknown_fields_are_all_reported():
    entity = _entity(labels={}, numerics={"price": 1.0, "stock": 1, "extra": 4})
    assert _codes(validate_entity(_schema(), entity)) == ["MISSING_FIELD", "UNKNOWN_FIELD"]


def test_integer_numeric_rejects_float():
    entity = _entity(numerics={"price": 1, "stock": 1.5})
    assert _codes(validate_entity(_schema(), entity)) == ["WRONG_TYPE"]


def test_entity_lsn_is_assigned_once():
    stamped = _entity().with_lsn(HlcTimestamp(10, 1))
    assert stamped.lsn == HlcTimestamp(10, 1)
    with pytest.raises(ValueError):
        stamped.with_lsn(HlcTimestamp(11))


def test_entity_dict_roundtrip_keeps_content():
    stamped = _entity().with_lsn(HlcTimestamp(10, 1))
    back = Entity.from_dict(stamped.to_dict())
    assert back.same_content(stamped)
    assert back.lsn == stamped.lsn


def test_columns_from_entities_and_back():
    schema = _schema()
    rows = [_entity(pk=i).with_lsn(HlcTimestamp(100 + i)) for i in range(3)]
    cols = SegmentColumns.from_entities(schema, rows)
    assert len(cols) == 3
    assert cols.vectors["vec"].shape == (3, 4)
    assert cols.numerics["stock"].dtype == np.int64
    assert cols.lsn(2) == HlcTimestamp(102)
    assert all(a.same_content(b) for a, b in zip(cols.entities(), rows))
    sub = cols.take([2, 0])
    assert sub.pks == [2, 0]


def test_columns_require_lsn():
    with pytest.raises(ValueError):
        SegmentColumns.from_entities(_schema(), [_entity()])
