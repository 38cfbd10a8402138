"""Small k-means used for EM seeding and silhouette candidate assignments."""

from __future__ import annotations

import numpy as np


def sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, clipped at zero."""
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d2, 0.0)


def farthest_point_centers(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    first = int(rng.integers(len(X)))
    centers = [X[first]]
    closest = sq_dists(X, X[first : first + 1])[:, 0]
    for _ in range(1, k):
        nxt = int(np.argmax(closest))
        centers.append(X[nxt])
        closest = np.minimum(closest, sq_dists(X, X[nxt : nxt + 1])[:, 0])
    return np.array(centers)


def kmeans(X: np.ndarray, k: int, seed, n_iter: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations from greedy farthest-point seeds.

    Returns ``(labels, centers)``. Clusters may come out empty; callers decide
    what to do with that.
    """
    rng = np.random.default_rng(seed)
    X = np.asarray(X, dtype=np.float64)
    centers = farthest_point_centers(X, k, rng)
    labels = np.argmin(sq_dists(X, centers), axis=1)
    for _ in range(n_iter):
        for j in range(k):
            members = X[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
        new_labels = np.argmin(sq_dists(X, centers), axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels, centers
