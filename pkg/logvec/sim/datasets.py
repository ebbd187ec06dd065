"""
Module: datasets.py

Role of this file
-----------------
Vector datasets for benchmarks and tests:
- fvecs files (SIFT / DEEP style: per row a little-endian int32 dimension
  followed by that many float32 values);
- CSV files (one vector per line, comma separated);
- synthetic uniform and clustered sets, fully determined by a seed.

ingest() and load_dataset() put vectors into a collection through the
normal write path (loggers, WAL, data nodes), never around it.

Who uses this file
------------------
- sim/workload.py builds its data from here.
- cli/main.py `ingest` and `workload run`.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import TYPE_CHECKING, Optional

import numpy as np
from loguru import logger

from logvec.models.errors import DatasetError
from logvec.models.schema import Entity, Schema

if TYPE_CHECKING:
    from logvec.algorithms.segment_index import IndexParams
    from logvec.cluster import Cluster
    from logvec.models.collection import CollectionDescriptor

DATASET_FORMATS = ("fvecs", "csv")


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def read_fvecs(path: str | os.PathLike) -> np.ndarray:
    source = Path(path)
    if not source.exists():
        raise DatasetError(f"dataset file not found: {source}")
    if source.stat().st_size % 4 != 0:
        raise DatasetError(f"{source} is not a sequence of 4-byte words")
    words = np.fromfile(source, dtype="<i4")
    if words.size == 0:
        return np.zeros((0, 0), dtype=np.float32)
    dim = int(words[0])
    if dim <= 0 or words.size % (dim + 1) != 0:
        raise DatasetError(f"{source}: malformed fvecs file (first row has dimension {dim})")
    rows = words.reshape(-1, dim + 1)
    if np.any(rows[:, 0] != dim):
        bad = int(np.flatnonzero(rows[:, 0] != dim)[0])
        raise DatasetError(f"{source}: row {bad} has dimension {int(rows[bad, 0])}, expected {dim}")
    return rows[:, 1:].copy().view("<f4").astype(np.float32)


def export_fvecs(path: str | os.PathLike, vectors: np.ndarray) -> None:
    data = np.asarray(vectors, dtype="<f4")
    if data.ndim != 2:
        raise DatasetError("fvecs export needs a 2-d array")
    n, dim = data.shape
    out = np.empty((n, dim + 1), dtype="<i4")
    out[:, 0] = dim
    out[:, 1:] = data.view("<i4")
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    out.tofile(target)


def read_csv_vectors(path: str | os.PathLike) -> np.ndarray:
    source = Path(path)
    if not source.exists():
        raise DatasetError(f"dataset file not found: {source}")
    lines = [ln.strip() for ln in source.read_text(encoding="utf-8").splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        return np.zeros((0, 0), dtype=np.float32)
    rows = []
    dim = None
    for i, line in enumerate(lines):
        try:
            row = [float(x) for x in line.split(",")]
        except ValueError as e:
            raise DatasetError(f"{source}: line {i + 1} is not numeric: {e}") from e
        if dim is None:
            dim = len(row)
        elif len(row) != dim:
            raise DatasetError(f"{source}: line {i + 1} has {len(row)} values, expected {dim}")
        rows.append(row)
    return np.asarray(rows, dtype=np.float32)


def read_vectors(path: str | os.PathLike, fmt: Optional[str] = None) -> np.ndarray:
    """Read a dataset file; the format defaults to the file suffix."""
    fmt = (fmt or Path(path).suffix.lstrip(".")).lower()
    if fmt == "fvecs":
        return read_fvecs(path)
    if fmt == "csv":
        return read_csv_vectors(path)
    raise DatasetError(f"unknown dataset format {fmt!r}, expected one of {DATASET_FORMATS}")


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def uniform(n: int, dim: int, seed: int = 42) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.random((n, dim), dtype=np.float32)


def clustered(n: int, dim: int, centers: int = 16, spread: float = 0.05, seed: int = 42) -> np.ndarray:
    rng = np.random.default_rng(seed)
    middles = rng.random((centers, dim), dtype=np.float32)
    owner = rng.integers(0, centers, size=n)
    noise = rng.normal(0.0, spread, size=(n, dim)).astype(np.float32)
    return (middles[owner] + noise).astype(np.float32)


def synthetic(kind: str, n: int, dim: int, seed: int = 42) -> np.ndarray:
    if kind == "uniform":
        return uniform(n, dim, seed)
    if kind == "clustered":
        return clustered(n, dim, seed=seed)
    raise DatasetError(f"unknown synthetic dataset {kind!r}")


def queries_near(data: np.ndarray, count: int, seed: int = 7, noise: float = 0.01) -> np.ndarray:
    """Query vectors drawn around dataset rows, the usual held-out-query stand-in."""
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, data.shape[0], size=count)
    return (data[picks] + rng.normal(0.0, noise, size=(count, data.shape[1]))).astype(np.float32)


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def ingest(
    cluster: "Cluster",
    collection: str,
    vectors: np.ndarray,
    start_pk: int = 0,
    batch_rows: int = 1000,
    settle: bool = True,
) -> int:
    """Insert `vectors` as entities pk = start_pk + row. Returns the row count."""
    desc = cluster.collection(collection)
    field = desc.schema.vector_field()
    data = np.asarray(vectors, dtype=np.float32)
    if data.shape[0] == 0:
        return 0
    if data.ndim != 2 or data.shape[1] != field.dim:
        raise DatasetError(f"collection {collection!r} expects dimension {field.dim}, dataset has {data.shape[-1]}")
    auto = desc.schema.auto_id
    for begin in range(0, data.shape[0], batch_rows):
        chunk = data[begin:begin + batch_rows]
        cluster.insert(
            collection,
            [
                Entity(pk=None if auto else start_pk + begin + i, vectors={field.name: row})
                for i, row in enumerate(chunk)
            ],
        )
        cluster.pump()
    if settle:
        cluster.settle()
    logger.info(f"ingested {data.shape[0]} rows into {collection!r}")
    return int(data.shape[0])


def load_dataset(
    cluster: "Cluster",
    collection: str,
    path: str | os.PathLike,
    fmt: Optional[str] = None,
    shards: Optional[int] = None,
    index_params: Optional["IndexParams"] = None,
    start_pk: int = 0,
) -> "CollectionDescriptor":
    """Read a dataset file into `collection`, creating it when missing."""
    data = read_vectors(path, fmt)
    if not cluster.root_coord.has_collection(collection):
        if data.shape[1] == 0:
            raise DatasetError(f"{path} is empty, the dimension of a new collection is unknown")
        cluster.create_collection(collection, Schema(vector_fields=[("vec", data.shape[1])]), shards, index_params)
    ingest(cluster, collection, data, start_pk=start_pk)
    return cluster.collection(collection)
