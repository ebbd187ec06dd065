"""
Module: vector_math.py

Role of this file
-----------------
Similarity metrics and the vector helpers everything else scores with.

- `distance` is the exact double-precision value for one pair.
- `scores` is the same value for a query against every row of a matrix.
- `sort_keys` / `score_key` turn metric values into "smaller is closer" keys.

Euclidean is the real L2 distance (lower is closer). Inner product and
angular (cosine similarity) are similarities (higher is closer).

Who uses this file
------------------
The index engine, the top-k merge, search requests and the workload recall oracle.
"""

from __future__ import annotations

from enum import Enum
from typing import Sequence, Union

import numpy as np

from logvec.models.errors import DimensionMismatchError, ZeroVectorError

VectorLike = Union[Sequence[float], np.ndarray]


class Metric(Enum):
    EUCLIDEAN = "l2"
    INNER_PRODUCT = "ip"
    ANGULAR = "cosine"

    @property
    def higher_is_closer(self) -> bool:
        return self is not Metric.EUCLIDEAN

    @classmethod
    def parse(cls, value: Union[str, "Metric"]) -> "Metric":
        if isinstance(value, Metric):
            return value
        aliases = {
            "l2": cls.EUCLIDEAN,
            "euclidean": cls.EUCLIDEAN,
            "ip": cls.INNER_PRODUCT,
            "inner_product": cls.INNER_PRODUCT,
            "cosine": cls.ANGULAR,
            "angular": cls.ANGULAR,
        }
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown metric: {value!r}") from None


def as_vector(v: VectorLike) -> np.ndarray:
    return np.asarray(v, dtype=np.float32).reshape(-1)


def as_matrix(vectors: Union[np.ndarray, Sequence[VectorLike]], dim: int | None = None) -> np.ndarray:
    m = np.asarray(vectors, dtype=np.float32)
    if m.ndim == 1:
        m = m.reshape(0, dim or 0) if m.size == 0 else m.reshape(1, -1)
    if dim is not None and m.shape[1] != dim:
        raise DimensionMismatchError(f"expected dim {dim}, got {m.shape[1]}")
    return m


def distance(metric: Metric, a: VectorLike, b: VectorLike) -> float:
    """
    Exact metric value in double precision.

    euclidean: L2 distance (lower is closer); inner_product / angular:
    similarity (higher is closer). Angular is cosine similarity.
    """
    va = np.asarray(a, dtype=np.float64).reshape(-1)
    vb = np.asarray(b, dtype=np.float64).reshape(-1)
    if va.shape != vb.shape:
        raise DimensionMismatchError(f"dimension mismatch: {va.shape[0]} vs {vb.shape[0]}")

    if metric is Metric.EUCLIDEAN:
        diff = va - vb
        return float(np.sqrt(np.dot(diff, diff)))
    if metric is Metric.INNER_PRODUCT:
        return float(np.dot(va, vb))

    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError("angular metric is undefined for zero vectors")
    return float(np.dot(va, vb) / (na * nb))


def scores(metric: Metric, matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Metric value of `query` against every row of `matrix` (float64)."""
    m = np.asarray(matrix, dtype=np.float64)
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if m.shape[0] == 0:
        return np.zeros(0, dtype=np.float64)
    if m.shape[1] != q.shape[0]:
        raise DimensionMismatchError(f"dimension mismatch: {m.shape[1]} vs {q.shape[0]}")

    if metric is Metric.EUCLIDEAN:
        diff = m - q
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))
    if metric is Metric.INNER_PRODUCT:
        return m @ q

    qn = float(np.linalg.norm(q))
    if qn == 0.0:
        raise ZeroVectorError("angular metric is undefined for zero vectors")
    norms = np.linalg.norm(m, axis=1)
    out = np.full(m.shape[0], -np.inf)
    nz = norms > 0
    out[nz] = (m[nz] @ q) / (norms[nz] * qn)
    return out


def sort_keys(metric: Metric, values: np.ndarray) -> np.ndarray:
    """Map metric values to keys where smaller is always closer."""
    values = np.asarray(values, dtype=np.float64)
    return -values if metric.higher_is_closer else values


def score_key(metric: Metric, value: float) -> float:
    return -value if metric.higher_is_closer else value
