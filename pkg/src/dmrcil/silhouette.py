"""Silhouette coefficients on squared distances and adaptive component count.

Cohesion ``a(i)`` and separation ``b(i)`` average *squared* Euclidean
distances rather than plain distances. A singleton cluster gets ``a = 0``.
Within one class the "clusters" are the candidate partitions produced for
each trial component count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cluster import kmeans, sq_dists


@dataclass(frozen=True)
class KSelectConfig:
    k_max: int = 5
    threshold: float = 0.1
    candidate_clusterer: str = "kmeans"
    seed: int = 0

    def __post_init__(self):
        if self.k_max < 2:
            raise ValueError("k_max must be >= 2")
        if not 0.0 <= self.threshold < 1.0:
            raise ValueError("threshold must lie in [0, 1)")
        if self.candidate_clusterer not in ("kmeans", "gmm-map"):
            raise ValueError(f"unknown clusterer {self.candidate_clusterer!r}")


def _prepare(assignment, data):
    X = np.atleast_2d(np.asarray(data, dtype=np.float64))
    labels = np.asarray(assignment)
    if len(labels) != len(X):
        raise ValueError("assignment and data lengths differ")
    return labels, X


def intra_cohesion(i: int, assignment, data) -> float:
    labels, X = _prepare(assignment, data)
    same = np.flatnonzero(labels == labels[i])
    same = same[same != i]
    if len(same) == 0:
        return 0.0
    return float(((X[same] - X[i]) ** 2).sum(1).mean())


def inter_separation(i: int, assignment, data) -> float:
    labels, X = _prepare(assignment, data)
    others = [c for c in np.unique(labels) if c != labels[i]]
    if not others:
        raise ValueError("b undefined: only one cluster")
    d2 = ((X - X[i]) ** 2).sum(1)
    return float(min(d2[labels == c].mean() for c in others))


def silhouette_samples(assignment, data) -> np.ndarray:
    """Per-sample ``s(i) = (b - a) / max(a, b)``, vectorised over all samples."""
    labels, X = _prepare(assignment, data)
    clusters, inverse, sizes = np.unique(labels, return_inverse=True, return_counts=True)
    if len(clusters) < 2:
        raise ValueError("b undefined: only one cluster")
    # mean squared distance from every sample to every cluster, centered form:
    # mean_j |x_i - x_j|^2 = |x_i - m_c|^2 + mean_j |x_j - m_c|^2
    onehot = np.zeros((len(X), len(clusters)))
    onehot[np.arange(len(X)), inverse] = 1.0
    centroid = onehot.T @ X / sizes[:, None]
    spread = onehot.T @ ((X - centroid[inverse]) ** 2).sum(1) / sizes
    to_cluster = ((X[:, None, :] - centroid[None, :, :]) ** 2).sum(-1) + spread[None, :]

    own = to_cluster[np.arange(len(X)), inverse]
    own_size = sizes[inverse]
    # drop the zero self-distance from the cohesion average
    a = np.where(own_size > 1, own * own_size / np.maximum(own_size - 1, 1), 0.0)
    to_cluster[np.arange(len(X)), inverse] = np.inf
    b = to_cluster.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    s = np.where(own_size > 1, s, 1.0)
    return np.clip(s, -1.0, 1.0)


def silhouette_samples_exact(assignment, data) -> np.ndarray:
    """Same as :func:`silhouette_samples` via the full pairwise matrix (O(n^2) memory)."""
    labels, X = _prepare(assignment, data)
    if len(np.unique(labels)) < 2:
        raise ValueError("b undefined: only one cluster")
    D = sq_dists(X, X)
    np.fill_diagonal(D, 0.0)
    s = np.empty(len(X))
    for i in range(len(X)):
        same = labels == labels[i]
        n_same = same.sum()
        if n_same == 1:
            s[i] = 1.0
            continue
        a = D[i, same].sum() / (n_same - 1)
        b = min(D[i, labels == c].mean() for c in np.unique(labels) if c != labels[i])
        m = max(a, b)
        s[i] = (b - a) / m if m > 0 else 0.0
    return s


def mean_silhouette(assignment, data) -> float:
    return float(silhouette_samples(assignment, data).mean())


def _candidate_labels(X, k, cfg: KSelectConfig):
    if cfg.candidate_clusterer == "kmeans":
        return kmeans(X, k, cfg.seed)[0]
    from .gmm import EmConfig, fit_em

    model, _ = fit_em(X, k, EmConfig(seed=cfg.seed, max_iters=50))
    return np.argmax(model.component_logpdf(X), axis=1)


def silhouette_profile(data, cfg: KSelectConfig = KSelectConfig()) -> dict[int, float]:
    """Mean silhouette for every usable trial ``K`` in ``2..k_max``."""
    X = np.atleast_2d(np.asarray(data, dtype=np.float64))
    scores = {}
    for k in range(2, cfg.k_max + 1):
        if len(X) < k:
            break
        try:
            labels = _candidate_labels(X, k, cfg)
        except ArithmeticError:
            continue
        if len(np.unique(labels)) < k:
            continue  # empty cluster: skip this K
        scores[k] = mean_silhouette(labels, X)
    return scores


def select_k(data, cfg: KSelectConfig = KSelectConfig()) -> int:
    """Best-scoring ``K`` if its mean silhouette beats the threshold, else 1."""
    scores = silhouette_profile(data, cfg)
    if not scores:
        return 1
    best_k = max(scores, key=lambda k: (scores[k], -k))
    return best_k if scores[best_k] > cfg.threshold else 1
