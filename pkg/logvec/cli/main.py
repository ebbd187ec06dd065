"""
Module: main.py

Role of this file
-----------------
Operator command line. Every verb opens the cluster stored under the root
directory, runs one operation through the public Cluster API and prints the
result as JSON.

    logvec [--root DIR] [--config FILE] [--verbose] VERB ...

    collection create NAME --dim D [--shards N] [--index KIND] [--metric M]
    collection drop NAME | collection list
    ingest NAME PATH [--format fvecs|csv]
    search NAME --vector 0.1,0.2,... [--k K] [--tau MS] [--filter EXPR] [--at TS]
    query NAME [--filter EXPR]
    delete NAME (--pks 1,2,3 | --filter EXPR)
    seal NAME
    node add|remove KIND [ID]           (KIND: query, data, index, logger)
    checkpoint NAME | restore NAME --at TS | gc NAME [--expiration-ms MS]
    stats [NAME] | now
    workload run SPEC.json [--report OUT.json] [--trace OUT.jsonl]
    serve                               (line-delimited JSON on stdin/stdout)

The root defaults to $LOGVEC_ROOT, then ./logvec-data. The configuration is
--config, else <root>/config.json when present, else the defaults. Node
counts changed with `node add/remove` are saved to <root>/config.json so the
next invocation starts the same membership.

Who uses this file
------------------
- main.py at the repository root (python main.py ...).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from loguru import logger
from pydantic import ValidationError

from logvec.algorithms.segment_index import IndexParams
from logvec.cluster import Cluster
from logvec.cli.wire import serve
from logvec.config import EngineConfig, load_config, save_config
from logvec.models.errors import LogvecError
from logvec.models.schema import DataType, Schema
from logvec.models.timestamps import HlcTimestamp
from logvec.sim.datasets import load_dataset
from logvec.sim.workload import WorkloadSpec, run_workload
from logvec.storage.json_io import load_json
from logvec.utils.clock import SystemClock
from logvec.utils.constants import ROOT_ENV_VAR

DEFAULT_ROOT = "logvec-data"
NODE_KINDS = ("query", "data", "index", "logger")


# ---------------------------------------------------------------------------
# Context
# ---------------------------------------------------------------------------

def resolve_root(arg: Optional[str]) -> Path:
    return Path(arg or os.environ.get(ROOT_ENV_VAR) or DEFAULT_ROOT)


def config_path(args: argparse.Namespace) -> Path:
    return Path(args.config) if args.config else resolve_root(args.root) / "config.json"


def resolve_config(args: argparse.Namespace) -> EngineConfig:
    path = config_path(args)
    if path.exists():
        return load_config(path)
    if args.config:
        raise FileNotFoundError(f"config file not found: {path}")
    return EngineConfig()


def configure_logging(verbose: bool) -> None:
    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if verbose else "WARNING")


def open_cluster(args: argparse.Namespace) -> Cluster:
    return Cluster(resolve_root(args.root), resolve_config(args), SystemClock())


def emit(data: Any) -> None:
    print(json.dumps(data, indent=2, sort_keys=True, default=str))


def parse_vector(text: str) -> List[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def parse_pks(text: str) -> List[Any]:
    out: List[Any] = []
    for part in (p.strip() for p in text.split(",")):
        if part:
            out.append(int(part) if part.lstrip("-").isdigit() else part)
    return out


# ---------------------------------------------------------------------------
# Verbs
# ---------------------------------------------------------------------------

def cmd_collection(args: argparse.Namespace, cluster: Cluster) -> Any:
    if args.action == "list":
        return [d.to_dict() for d in cluster.list_collections()]
    if args.action == "drop":
        cluster.drop_collection(args.name)
        return {"dropped": args.name}
    schema = Schema(
        vector_fields=[(args.vector_field, args.dim)],
        pk_type=DataType.VARCHAR if args.string_pk else DataType.INT64,
        auto_id=args.auto_id,
        label_fields=[f for f in (args.labels or "").split(",") if f],
        numeric_fields=[f for f in (args.numerics or "").split(",") if f],
    )
    params = IndexParams.from_settings(cluster.config.index.model_copy(update={"kind": args.index}), args.metric)
    desc = cluster.create_collection(args.name, schema, args.shards, params)
    return desc.to_dict()


def cmd_ingest(args: argparse.Namespace, cluster: Cluster) -> Any:
    desc = load_dataset(cluster, args.name, args.path, args.format, start_pk=args.start_pk)
    return {"collection": desc.name, "rows": cluster.count(desc.name)}


def cmd_search(args: argparse.Namespace, cluster: Cluster) -> Any:
    result = cluster.search(
        args.name,
        [parse_vector(args.vector)],
        args.k,
        metric=args.metric,
        tau_ms=args.tau,
        filter=args.filter,
        travel_ts=None if args.at is None else HlcTimestamp.decode(args.at),
    )
    return result.to_dict()


def cmd_query(args: argparse.Namespace, cluster: Cluster) -> Any:
    at = None if args.at is None else HlcTimestamp.decode(args.at)
    return {"pks": cluster.query(args.name, args.filter, travel_ts=at)}


def cmd_delete(args: argparse.Namespace, cluster: Cluster) -> Any:
    if args.filter:
        return {"deleted": cluster.delete_where(args.name, args.filter)}
    return {"deleted": len(cluster.delete(args.name, parse_pks(args.pks or "")))}


def cmd_seal(args: argparse.Namespace, cluster: Cluster) -> Any:
    return {"sealed": cluster.seal(args.name)}


def _node_counts(cluster: Cluster) -> Dict[str, int]:
    return {
        "query": len(cluster.alive_query_nodes()),
        "data": len(cluster.data_nodes),
        "index": len(cluster.index_coord.nodes),
        "logger": len(cluster.loggers.loggers),
    }


def cmd_node(args: argparse.Namespace, cluster: Cluster) -> Any:
    kind = args.kind
    if args.action == "add":
        node_id = {
            "query": cluster.add_query_node,
            "data": cluster.add_data_node,
            "index": cluster.add_index_node,
            "logger": cluster.add_logger,
        }[kind]()
    else:
        node_id = args.node_id or sorted(
            {
                "query": cluster.alive_query_nodes(),
                "data": cluster.data_nodes,
                "index": cluster.index_coord.nodes,
                "logger": cluster.loggers.loggers,
            }[kind]
        )[-1]
        {
            "query": cluster.remove_query_node,
            "data": cluster.remove_data_node,
            "index": cluster.remove_index_node,
            "logger": cluster.remove_logger,
        }[kind](node_id)
    cluster.settle()
    counts = _node_counts(cluster)
    field = {"query": "query_nodes", "data": "data_nodes", "index": "index_nodes", "logger": "loggers"}[kind]
    config = cluster.config.model_copy(deep=True)
    setattr(config.nodes, field, max(counts[kind], 0 if kind == "index" else 1))
    save_config(config_path(args), config)
    return {"action": args.action, "kind": kind, "node": node_id, "nodes": counts}


def cmd_checkpoint(args: argparse.Namespace, cluster: Cluster) -> Any:
    return {"checkpoint": cluster.checkpoint(args.name)}


def cmd_restore(args: argparse.Namespace, cluster: Cluster) -> Any:
    snapshot = cluster.restore_at(args.name, HlcTimestamp.decode(args.at))
    return {
        "snapshot": f"{snapshot.descriptor.collection_id}@{snapshot.at.encode()}",
        "at": str(snapshot.at),
        "rows": snapshot.row_count,
    }


def cmd_gc(args: argparse.Namespace, cluster: Cluster) -> Any:
    return cluster.gc(args.name, args.expiration_ms).to_dict()


def cmd_stats(args: argparse.Namespace, cluster: Cluster) -> Any:
    return cluster.stats(args.name)


def cmd_now(args: argparse.Namespace, cluster: Cluster) -> Any:
    ts = cluster.now()
    return {"ts": ts.encode(), "hlc": str(ts)}


def cmd_serve(args: argparse.Namespace, cluster: Cluster) -> Any:
    return {"served": serve(cluster, sys.stdin, sys.stdout)}


def cmd_workload(args: argparse.Namespace) -> Any:
    spec = WorkloadSpec.model_validate(load_json(args.spec))
    root = args.workdir or tempfile.mkdtemp(prefix="logvec-workload-")
    report, trace = run_workload(spec, root)
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if args.trace:
        with Path(args.trace).open("w", encoding="utf-8") as f:
            for event in trace:
                f.write(json.dumps(event, sort_keys=True) + "\n")
    print(report.to_table())
    return None


CLUSTER_VERBS: Dict[str, Callable[[argparse.Namespace, Cluster], Any]] = {
    "collection": cmd_collection,
    "ingest": cmd_ingest,
    "search": cmd_search,
    "query": cmd_query,
    "delete": cmd_delete,
    "seal": cmd_seal,
    "node": cmd_node,
    "checkpoint": cmd_checkpoint,
    "restore": cmd_restore,
    "gc": cmd_gc,
    "stats": cmd_stats,
    "now": cmd_now,
    "serve": cmd_serve,
}


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="logvec", description="Log-structured vector database.")
    parser.add_argument("--root", help="storage root (default: $LOGVEC_ROOT or ./logvec-data)")
    parser.add_argument("--config", help="JSON configuration file")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging on stderr")
    verbs = parser.add_subparsers(dest="verb", required=True)

    col = verbs.add_parser("collection", help="create, drop or list collections")
    col.add_argument("action", choices=("create", "drop", "list"))
    col.add_argument("name", nargs="?")
    col.add_argument("--dim", type=int, default=0)
    col.add_argument("--shards", type=int)
    col.add_argument("--index", choices=("flat", "ivf_flat", "hnsw"), default="flat")
    col.add_argument("--metric", default="l2")
    col.add_argument("--vector-field", default="vec")
    col.add_argument("--auto-id", action="store_true")
    col.add_argument("--string-pk", action="store_true")
    col.add_argument("--labels", help="comma separated label field names")
    col.add_argument("--numerics", help="comma separated numeric field names")

    ing = verbs.add_parser("ingest", help="load an fvecs or csv file through the write path")
    ing.add_argument("name")
    ing.add_argument("path")
    ing.add_argument("--format", choices=("fvecs", "csv"))
    ing.add_argument("--start-pk", type=int, default=0)

    srch = verbs.add_parser("search", help="top-k vector search")
    srch.add_argument("name")
    srch.add_argument("--vector", required=True, help="comma separated floats")
    srch.add_argument("--k", type=int, default=10)
    srch.add_argument("--metric")
    srch.add_argument("--tau", type=float, help="staleness tolerance in ms (default: consistency.default_tau_ms)")
    srch.add_argument("--filter")
    srch.add_argument("--at", type=int, help="time-travel timestamp (encoded)")

    qry = verbs.add_parser("query", help="primary keys matching a filter")
    qry.add_argument("name")
    qry.add_argument("--filter")
    qry.add_argument("--at", type=int)

    dele = verbs.add_parser("delete", help="delete by primary keys or by filter")
    dele.add_argument("name")
    group = dele.add_mutually_exclusive_group(required=True)
    group.add_argument("--pks")
    group.add_argument("--filter")

    seal = verbs.add_parser("seal", help="seal every growing segment of a collection")
    seal.add_argument("name")

    node = verbs.add_parser("node", help="add or remove a node")
    node.add_argument("action", choices=("add", "remove"))
    node.add_argument("kind", choices=NODE_KINDS)
    node.add_argument("node_id", nargs="?")

    for verb, text in (("checkpoint", "write a checkpoint"), ("gc", "expire old history")):
        p = verbs.add_parser(verb, help=text)
        p.add_argument("name")
        if verb == "gc":
            p.add_argument("--expiration-ms", type=float)

    rest = verbs.add_parser("restore", help="restore a collection at a past timestamp")
    rest.add_argument("name")
    rest.add_argument("--at", type=int, required=True)

    st = verbs.add_parser("stats", help="cluster and collection statistics")
    st.add_argument("name", nargs="?")

    verbs.add_parser("now", help="allocate a timestamp (for restore --at)")
    verbs.add_parser("serve", help="answer line-delimited JSON requests on stdin")

    wl = verbs.add_parser("workload", help="run a benchmark workload")
    wl.add_argument("action", choices=("run",))
    wl.add_argument("spec", help="WorkloadSpec JSON file")
    wl.add_argument("--report", help="write the report as JSON")
    wl.add_argument("--trace", help="write the event trace as JSON lines")
    wl.add_argument("--workdir", help="storage root of the run (default: a temporary directory)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)
    if args.verb == "collection" and args.action != "list" and not args.name:
        parser.error("collection create/drop needs a NAME")
    if args.verb == "collection" and args.action == "create" and args.dim < 1:
        parser.error("collection create needs --dim >= 1")
    try:
        if args.verb == "workload":
            result = cmd_workload(args)
        else:
            cluster = open_cluster(args)
            try:
                result = CLUSTER_VERBS[args.verb](args, cluster)
            finally:
                cluster.close()
    except (LogvecError, ValidationError, ValueError, KeyError, FileNotFoundError) as e:
        logger.error(f"{args.verb} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1
    if result is not None and args.verb != "serve":
        emit(result)
    return 0
