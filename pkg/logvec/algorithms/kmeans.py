"""
Module: kmeans.py

Role of this file
-----------------
Lloyd's k-means with k-means++ seeding from a fixed seed. Shared by the IVF
index (coarse quantizer), temporary slice indexes and the bucket index
(binary splits).

Convergence: stop once no centroid moves more than `tol` (Euclidean) or
after `max_iters` iterations. The objective (sum of squared distances to the
assigned centroid) is recorded after every assignment step; it never
increases from one iteration to the next.

Same input + same seed => same centroids, bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from logvec.models.errors import IndexBuildError
from logvec.models.rules import DEFAULT_SEED, KMEANS_MAX_ITERS, KMEANS_TOL


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    objective_history: List[float] = field(default_factory=list)
    iterations: int = 0

    @property
    def objective(self) -> float:
        return self.objective_history[-1] if self.objective_history else 0.0


def squared_distances(data: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(n, k) squared Euclidean distances, float64, clipped at zero."""
    x = np.asarray(data, dtype=np.float64)
    c = np.asarray(centroids, dtype=np.float64)
    d = (x * x).sum(axis=1)[:, None] - 2.0 * (x @ c.T) + (c * c).sum(axis=1)[None, :]
    np.maximum(d, 0.0, out=d)
    return d


def objective(data: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    x = np.asarray(data, dtype=np.float64)
    diff = x - np.asarray(centroids, dtype=np.float64)[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def kmeans_plus_plus(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(data, dtype=np.float64)
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    closest = squared_distances(x, x[chosen[0]][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # every point already coincides with a centroid
            nxt = int(rng.integers(n))
        else:
            nxt = int(rng.choice(n, p=closest / total))
        chosen.append(nxt)
        closest = np.minimum(closest, squared_distances(x, x[nxt][None, :])[:, 0])
    return x[chosen].copy()


def kmeans(
    data: np.ndarray,
    k: int,
    max_iters: int = KMEANS_MAX_ITERS,
    tol: float = KMEANS_TOL,
    seed: int = DEFAULT_SEED,
) -> KMeansResult:
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise IndexBuildError("k-means needs a non-empty 2-d array")
    n = x.shape[0]
    if k < 1 or k > n:
        raise IndexBuildError(f"k must be in [1, {n}], got {k}")

    rng = np.random.default_rng(seed)
    centroids = kmeans_plus_plus(x, k, rng)
    labels = np.argmin(squared_distances(x, centroids), axis=1)
    history = [objective(x, centroids, labels)]
    iterations = 0

    for _ in range(max_iters):
        iterations += 1
        new_centroids = centroids.copy()
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, x)
        nonempty = counts > 0
        new_centroids[nonempty] = sums[nonempty] / counts[nonempty][:, None]

        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        labels = np.argmin(squared_distances(x, centroids), axis=1)
        history.append(objective(x, centroids, labels))
        if shift < tol:
            break

    return KMeansResult(
        centroids=centroids.astype(np.float32),
        labels=labels.astype(np.int64),
        objective_history=history,
        iterations=iterations,
    )


def assign(data: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return np.argmin(squared_distances(data, centroids), axis=1).astype(np.int64)
