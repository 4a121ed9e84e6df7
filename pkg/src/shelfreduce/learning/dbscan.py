"""Density-based clustering with canonical labels."""

from __future__ import annotations

from collections import deque

import numpy as np
from scipy.spatial import cKDTree

NOISE = -1


def dbscan(points, eps: float, min_pts: int) -> np.ndarray:
    """Cluster labels (``-1`` for noise) under the Euclidean metric.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``.  Clusters are the connected components of core points and
    are numbered by their lowest core index.  A border point joins the
    lowest-numbered cluster among its core neighbours.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be at least 1")
    X = np.asarray(points, dtype=float)
    n = len(X)
    labels = np.full(n, NOISE, dtype=int)
    if n == 0:
        return labels
    if X.ndim == 1:
        X = X[:, None]
    tree = cKDTree(X)
    neigh = tree.query_ball_point(X, r=eps)
    core = np.array([len(nb) >= min_pts for nb in neigh])

    cluster = 0
    for i in range(n):
        if not core[i] or labels[i] != NOISE:
            continue
        labels[i] = cluster
        queue = deque([i])
        while queue:
            p = queue.popleft()
            for q in neigh[p]:
                if core[q] and labels[q] == NOISE:
                    labels[q] = cluster
                    queue.append(q)
        cluster += 1

    for i in np.flatnonzero(~core):
        owners = [labels[q] for q in neigh[i] if core[q]]
        if owners:
            labels[i] = min(owners)
    return labels


def k_distance(points, k: int) -> np.ndarray:
    """Sorted distance of every point to its k-th nearest neighbour (itself counts as the first)."""
    X = np.asarray(points, dtype=float)
    if len(X) < 2:
        return np.zeros(len(X))
    k = min(k, len(X))
    d, _ = cKDTree(X).query(X, k=k)
    d = d if d.ndim == 1 else d[:, -1]
    return np.sort(d)


def elbow_eps(points, min_pts: int) -> float:
    """eps at the knee of the sorted k-distance curve (largest gap to the chord)."""
    d = k_distance(points, min_pts)
    if len(d) < 3 or d[-1] <= d[0]:
        return float(max(d[-1], 1e-9)) if len(d) else 1.0
    x = np.linspace(0.0, 1.0, len(d))
    y = (d - d[0]) / (d[-1] - d[0])
    knee = int(np.argmax(x - y))
    return float(max(d[knee], 1e-9))


def standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    return (X - mu) / sd, mu, sd
