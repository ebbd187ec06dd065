import io
import json
import math

import pytest

from logvec.cli.wire import handle_request, serve
from logvec.cluster import Cluster
from logvec.models.schema import Schema


@pytest.fixture
def cluster(tmp_path):
    c = Cluster(tmp_path / "store")
    c.create_collection("docs", Schema(vector_fields=[("vec", 2)], label_fields=["color"]))
    yield c
    c.close()


def _entities(n):
    return [
        {"pk": i, "vectors": {"vec": [float(i), 0.0]}, "labels": {"color": "red" if i % 2 else "blue"}}
        for i in range(n)
    ]


def test_insert_then_search(cluster):
    inserted = handle_request(cluster, {"op": "insert", "collection": "docs", "entities": _entities(5)})
    assert inserted["pks"] == [0, 1, 2, 3, 4]
    assert len(inserted["lsns"]) == 5 and inserted["lsns"] == sorted(inserted["lsns"])

    response = handle_request(
        cluster, {"op": "search", "collection": "docs", "vector": [3.2, 0.0], "k": 2, "tau_ms": 0}
    )
    assert [h["pk"] for h in response["hits"]] == [3, 4]
    assert response["hits"][0]["score"] == pytest.approx(0.2, abs=1e-5)


def test_multi_vector_search_returns_a_list_per_query(cluster):
    handle_request(cluster, {"op": "insert", "collection": "docs", "entities": _entities(4)})
    response = handle_request(
        cluster,
        {"op": "search", "collection": "docs", "vectors": [[0, 0], [3, 0]], "k": 1, "tau_ms": 0},
    )
    assert [[h["pk"] for h in hits] for hits in response["hits"]] == [[0], [3]]


def test_query_and_delete(cluster):
    handle_request(cluster, {"op": "insert", "collection": "docs", "entities": _entities(6)})
    assert handle_request(cluster, {"op": "query", "collection": "docs", "filter": "color == 'red'", "tau_ms": 0}) == {
        "pks": [1, 3, 5]
    }
    deleted = handle_request(cluster, {"op": "delete", "collection": "docs", "pks": [0, 1]})
    assert deleted["deleted"] == 2
    assert handle_request(cluster, {"op": "delete", "collection": "docs", "filter": "pk >= 4"}) == {"deleted": 2}
    assert handle_request(cluster, {"op": "query", "collection": "docs", "tau_ms": 0})["pks"] == [2, 3]


def test_null_tau_is_eventual(cluster):
    handle_request(cluster, {"op": "insert", "collection": "docs", "entities": _entities(2)})
    cluster.settle()
    response = handle_request(cluster, {"op": "search", "collection": "docs", "vector": [0, 0], "k": 1, "tau_ms": None})
    assert response["waited_ms"] == 0.0
    assert math.isinf(cluster.make_request("docs", [0, 0], tau_ms=math.inf).tau_ms)


def test_errors_are_answered_not_raised(cluster):
    assert handle_request(cluster, {"op": "fly"})["error"] == "UnknownOperation"
    missing = handle_request(cluster, {"op": "query", "collection": "nope"})
    assert missing["error"] == "CollectionNotFoundError"
    handle_request(cluster, {"op": "insert", "collection": "docs", "entities": _entities(1)})
    duplicate = handle_request(cluster, {"op": "insert", "collection": "docs", "entities": _entities(1)})
    assert duplicate["error"] == "DuplicatePrimaryKeyError"
    bad_filter = handle_request(cluster, {"op": "query", "collection": "docs", "filter": "color <"})
    assert bad_filter["error"] == "FilterError"


def test_serve_answers_one_line_per_request(cluster):
    lines = [
        json.dumps({"op": "insert", "collection": "docs", "entities": _entities(3)}),
        "",
        "not json",
        "[1, 2]",
        json.dumps({"op": "seal", "collection": "docs"}),
        json.dumps({"op": "now"}),
    ]
    out = io.StringIO()
    assert serve(cluster, io.StringIO("\n".join(lines) + "\n"), out) == 5
    responses = [json.loads(line) for line in out.getvalue().splitlines()]
    assert responses[0]["pks"] == [0, 1, 2]
    assert responses[1]["error"] == "BadRequest"
    assert responses[2]["error"] == "BadRequest"
    assert responses[3]["sealed"]
    assert responses[4]["ts"] > responses[0]["lsns"][-1]
