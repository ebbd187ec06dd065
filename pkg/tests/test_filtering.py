import numpy as np
import pytest

from logvec.algorithms.filtering import BoolOp, Comparison, Not, compile_filter, parse_filter
from logvec.algorithms.flat import exact_search
from logvec.algorithms.segment_index import IndexParams, SegmentIndex
from logvec.algorithms.segment_search import search_rows, segment_search
from logvec.models.columns import SegmentColumns
from logvec.models.errors import FilterError
from logvec.models.schema import DataType, Entity, Schema
from logvec.models.timestamps import HlcTimestamp
from logvec.utils.vector_math import Metric


SCHEMA = Schema(vector_fields=[("vec", 2)], label_fields=["color"], numeric_fields=["price", ("stock", "int64")])


def _columns():
    rows = [
        Entity(
            pk=i,
            vectors={"vec": [i, 0]},
            labels={"color": ["red", "blue", "green"][i % 3]},
            numerics={"price": float(i * 10), "stock": i},
        ).with_lsn(HlcTimestamp(100 + i))
        for i in range(6)
    ]
    return SegmentColumns.from_entities(SCHEMA, rows)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def test_precedence_and_binds_tighter_than_or():
    expr = parse_filter("price < 10 or color == 'red' and stock >= 2")
    assert isinstance(expr.root, BoolOp) and expr.root.op == "or"
    assert isinstance(expr.root.children[1], BoolOp)
    assert expr.fields == ["color", "price", "stock"]


def test_symbolic_operators_and_literals():
    expr = parse_filter('!(color = "a\\"b") && price > -1.5e1')
    assert isinstance(expr.root.children[0], Not)
    assert expr.root.children[0].child == Comparison("color", "==", 'a"b')
    assert expr.root.children[1] == Comparison("price", ">", -15.0)


@pytest.mark.parametrize(
    "text",
    ["", "   ", "price <", "price 10", "(price < 1", "price < 1 extra", "10 < price", "price < 1 $"],
)
def test_malformed_filters_raise(text):
    with pytest.raises(FilterError):
        parse_filter(text)


@pytest.mark.parametrize(
    "text",
    ["missing == 1", "vec == 1", "color < 'x'", "color == 3", "price == 'x'", "pk == 1.5"],
)
def test_type_errors_raise(text):
    with pytest.raises(FilterError):
        compile_filter(text, SCHEMA)


def test_compile_none_is_none():
    assert compile_filter(None, SCHEMA) is None


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def test_evaluate_over_columns():
    cols = _columns()
    mask = compile_filter("color == 'red' or (price >= 40 and not stock == 5)", SCHEMA).evaluate(cols)
    assert mask.tolist() == [True, False, False, True, True, False]
    assert compile_filter("pk != 2", SCHEMA).evaluate(cols).sum() == 5


def test_evaluate_empty_columns():
    mask = compile_filter("price > 1", SCHEMA).evaluate(SegmentColumns.empty(SCHEMA))
    assert mask.shape == (0,)


def test_matches_single_entity():
    entity = Entity(pk=7, vectors={"vec": [0, 0]}, labels={"color": "blue"}, numerics={"price": 3.0, "stock": 1})
    assert compile_filter("color != 'red' and price < 5", SCHEMA).matches(entity)
    assert not compile_filter("pk == 8", SCHEMA).matches(entity)


def test_string_primary_key_comparison():
    schema = Schema(vector_fields=[("vec", 2)], pk_type=DataType.VARCHAR)
    assert compile_filter("pk == 'doc-1'", schema) is not None
    with pytest.raises(FilterError):
        compile_filter("pk == 1", schema)


# ---------------------------------------------------------------------------
# Filtered segment search
# ---------------------------------------------------------------------------

def test_exact_filtered_search_masks_rows():
    cols = _columns()
    mask = compile_filter("color == 'blue'", SCHEMA).evaluate(cols)
    hits = segment_search(cols.pks, cols.vectors["vec"], np.array([0.0, 0.0]), Metric.EUCLIDEAN, 3, 9, filter_mask=mask)
    assert [h.pk for h in hits] == [1, 4]
    assert all(h.segment_id == 9 for h in hits)


def test_indexed_filtered_search_widens_until_k_match():
    rng = np.random.default_rng(1)
    vectors = rng.random((400, 4)).astype(np.float32)
    index = SegmentIndex.build(IndexParams(kind="ivf_flat", nlist=8, nprobe=8), vectors)
    mask = np.zeros(400, dtype=bool)
    mask[::40] = True
    q = vectors[5]
    rows, _ = search_rows(vectors, q, Metric.EUCLIDEAN, 5, index=index, filter_mask=mask, oversample=1)
    truth, _ = exact_search(vectors, q, Metric.EUCLIDEAN, 5, deleted=~mask)
    assert rows.tolist() == truth.tolist()


def test_index_for_another_metric_falls_back_to_exact():
    vectors = np.array([[1.0, 0.0], [3.0, 0.0], [2.0, 0.0]], dtype=np.float32)
    index = SegmentIndex.build(IndexParams(kind="hnsw", m=2), vectors)
    rows, _ = search_rows(vectors, np.array([1.0, 0.0]), Metric.INNER_PRODUCT, 1, index=index)
    assert rows.tolist() == [1]


def test_deleted_rows_with_filter():
    vectors = np.arange(12, dtype=np.float32).reshape(6, 2)
    deleted = np.array([True, False, False, False, False, False])
    mask = np.array([True, True, False, True, False, False])
    rows, _ = search_rows(vectors, np.zeros(2), Metric.EUCLIDEAN, 6, deleted=deleted, filter_mask=mask)
    assert rows.tolist() == [1, 3]
