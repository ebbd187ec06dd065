"""
Module: wire.py

Role of this file
-----------------
Line-delimited JSON request/response format of the service boundary. One
request object per line in, one response object per line out:

    {"op": "search", "collection": "docs", "vector": [0.1, 0.2], "k": 50,
     "metric": "l2", "tau_ms": 100, "filter": "price < 100"}
    -> {"hits": [{"pk": 7, "score": 0.01}, ...], "waited_ms": 0.0}

Other operations: insert, delete, query, seal, stats, now. A failing request
answers {"error": <exception class>, "message": ...} and the stream goes on.
`tau_ms: null` means eventual consistency (JSON has no infinity).

Who uses this file
------------------
- cli/main.py `serve`.
"""

from __future__ import annotations

import json
import math
from typing import Any, Callable, Dict, TextIO

from loguru import logger

from logvec.cluster import Cluster
from logvec.models.errors import LogvecError
from logvec.models.schema import Entity
from logvec.models.timestamps import HlcTimestamp

Handler = Callable[[Cluster, Dict[str, Any]], Dict[str, Any]]


def _tau(request: Dict[str, Any], cluster: Cluster) -> float:
    if "tau_ms" not in request:
        return cluster.config.consistency.default_tau_ms
    value = request["tau_ms"]
    return math.inf if value is None else float(value)


def _travel(request: Dict[str, Any]):
    value = request.get("travel_ts")
    return None if value is None else HlcTimestamp.decode(int(value))


def _search(cluster: Cluster, request: Dict[str, Any]) -> Dict[str, Any]:
    vectors = request.get("vectors") or [request["vector"]]
    result = cluster.search(
        request["collection"],
        vectors,
        int(request.get("k", 10)),
        metric=request.get("metric"),
        tau_ms=_tau(request, cluster),
        filter=request.get("filter"),
        travel_ts=_travel(request),
        vector_field=request.get("field"),
    )
    response = result.to_dict()
    if len(vectors) > 1:
        response["hits"] = [[h.to_dict() for h in hits] for hits in result.hits]
    return response


def _insert(cluster: Cluster, request: Dict[str, Any]) -> Dict[str, Any]:
    entities = [Entity.from_dict(e) for e in request["entities"]]
    logged = cluster.insert(request["collection"], entities)
    return {"pks": [e.pk for e in logged], "lsns": [e.lsn.encode() for e in logged]}


def _delete(cluster: Cluster, request: Dict[str, Any]) -> Dict[str, Any]:
    if "filter" in request:
        return {"deleted": cluster.delete_where(request["collection"], request["filter"])}
    stamps = cluster.delete(request["collection"], request["pks"])
    return {"deleted": len(stamps), "lsns": [ts.encode() for ts in stamps]}


def _query(cluster: Cluster, request: Dict[str, Any]) -> Dict[str, Any]:
    pks = cluster.query(request["collection"], request.get("filter"), _tau(request, cluster), _travel(request))
    return {"pks": pks}


def _seal(cluster: Cluster, request: Dict[str, Any]) -> Dict[str, Any]:
    return {"sealed": cluster.seal(request["collection"])}


def _stats(cluster: Cluster, request: Dict[str, Any]) -> Dict[str, Any]:
    return cluster.stats(request.get("collection"))


def _now(cluster: Cluster, request: Dict[str, Any]) -> Dict[str, Any]:
    return {"ts": cluster.now().encode()}


HANDLERS: Dict[str, Handler] = {
    "search": _search,
    "insert": _insert,
    "delete": _delete,
    "query": _query,
    "seal": _seal,
    "stats": _stats,
    "now": _now,
}


def handle_request(cluster: Cluster, request: Dict[str, Any]) -> Dict[str, Any]:
    op = request.get("op")
    handler = HANDLERS.get(op)
    if handler is None:
        return {"error": "UnknownOperation", "message": f"unknown op {op!r}"}
    try:
        return handler(cluster, request)
    except (LogvecError, ValueError, KeyError) as e:
        logger.warning(f"request {op!r} failed: {e}")
        return {"error": type(e).__name__, "message": str(e)}


def serve(cluster: Cluster, source: TextIO, sink: TextIO) -> int:
    """Answer requests until the input ends. Returns the number of requests served."""
    served = 0
    for line in source:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError as e:
            response = {"error": "BadRequest", "message": str(e)}
        else:
            response = handle_request(cluster, request) if isinstance(request, dict) else {
                "error": "BadRequest",
                "message": "request must be a JSON object",
            }
        sink.write(json.dumps(response, sort_keys=True) + "\n")
        sink.flush()
        cluster.pump()
        served += 1
    return served
