"""Seeded Lloyd k-means with k-means++ initialization.

Small and dependency-free so that knot/inducing-point selection is
bit-reproducible given the generator state.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.spatial.distance import cdist

__all__ = ["kmeans"]

_MAX_ITER = 25


def _plusplus_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j:] = X[rng.integers(n, size=k - j)]
            break
        probs = d2 / total
        centers[j] = X[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, np.sum((X - centers[j]) ** 2, axis=1))
    return centers


def kmeans(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Cluster centers of ``points`` (n x d). Deterministic given ``rng``.

    If fewer than ``k`` distinct rows exist, k is reduced with a warning.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    distinct = np.unique(X, axis=0)
    if k > distinct.shape[0]:
        warnings.warn(
            f"requested {k} clusters but only {distinct.shape[0]} distinct "
            f"points; reducing", stacklevel=2)
        k = distinct.shape[0]
    if k == distinct.shape[0]:
        return distinct
    if k == 1:
        return X.mean(axis=0, keepdims=True)

    centers = _plusplus_init(X, k, rng)
    for _ in range(_MAX_ITER):
        labels = np.argmin(cdist(X, centers, "sqeuclidean"), axis=1)
        new_centers = centers.copy()
        for j in range(k):
            mask = labels == j
            if mask.any():
                new_centers[j] = X[mask].mean(axis=0)
            else:
                # reseed an empty cluster at the point farthest from its center
                far = np.argmax(np.min(cdist(X, new_centers, "sqeuclidean"),
                                       axis=1))
                new_centers[j] = X[far]
        if np.allclose(new_centers, centers, rtol=0.0, atol=1e-12):
            centers = new_centers
            break
        centers = new_centers
    return centers
