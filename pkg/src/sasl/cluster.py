"""k-means (Lloyd iterations from k-means++ seeding)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import KTooLarge


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    inertia: float
    labels: np.ndarray
    history: list[float] = field(default_factory=list)

    def predict(self, points) -> np.ndarray:
        return _assign(np.asarray(points, dtype=float), self.centroids)


def _sq_dist(points, centroids):
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _assign(points, centroids):
    return np.argmin(_sq_dist(points, centroids), axis=1)


def _plus_plus(points, k, rng):
    centers = [points[rng.integers(points.shape[0])]]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        idx = rng.choice(points.shape[0], p=d2 / d2.sum())
        centers.append(points[idx])
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def kmeans_cluster(points, k: int = 10, rng_seed: int = 0, max_iter: int = 300) -> ClusterModel:
    """Lloyd's algorithm until the assignment repeats or ``max_iter`` rounds.

    An emptied cluster keeps its previous centroid. ``history`` holds the
    inertia after every update step and never increases.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if k < 1 or k > np.unique(points, axis=0).shape[0]:
        raise KTooLarge(f"k={k} exceeds the number of distinct points")
    rng = np.random.default_rng(rng_seed)
    centroids = _plus_plus(points, k, rng)
    labels = _assign(points, centroids)
    history = []
    for _ in range(max_iter):
        for c in range(k):
            members = labels == c
            if members.any():
                centroids[c] = points[members].mean(axis=0)
        history.append(float(_sq_dist(points, centroids)[np.arange(len(points)), labels].sum()))
        new = _assign(points, centroids)
        if np.array_equal(new, labels):
            break
        labels = new
    inertia = float(_sq_dist(points, centroids)[np.arange(len(points)), labels].sum())
    return ClusterModel(k, centroids, inertia, labels, history)
