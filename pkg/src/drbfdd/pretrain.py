"""k-means pre-training of the RBFDD kernel layer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from drbfdd.errors import ShapeError
from drbfdd.rbfdd import RbfddParams, squared_distances


@dataclass
class KmeansResult:
    centers: np.ndarray
    assignments: np.ndarray
    inertia: float
    history: list[float] = field(default_factory=list)
    n_iter: int = 0


def _plusplus_seeds(points, k, rng):
    n = points.shape[0]
    idx = [int(rng.integers(n))]
    d2 = squared_distances(points, points[idx])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all remaining points coincide with a chosen seed
            choice = int(rng.integers(n))
        else:
            choice = int(rng.choice(n, p=d2 / total))
        idx.append(choice)
        d2 = np.minimum(d2, squared_distances(points, points[[choice]])[:, 0])
    return points[idx].copy()


def _assign(points, centers):
    d2 = squared_distances(points, centers)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(points.shape[0]), labels]


def kmeans(points, k: int, seed: int, max_iters: int = 100, tol: float = 1e-6) -> KmeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    An empty cluster is re-seeded with the point that currently lies farthest
    from its own center.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ShapeError(f"points must be (N, D), got {points.shape}")
    n = points.shape[0]
    if k < 1 or n < k:
        raise ValueError(f"need N >= k >= 1, got N={n}, k={k}")
    rng = np.random.default_rng(seed)
    centers = _plusplus_seeds(points, k, rng)
    labels, dist = _assign(points, centers)
    history = [float(dist.sum())]

    it = 0
    for it in range(1, max_iters + 1):
        new = np.empty_like(centers)
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = points[members].mean(axis=0)
            else:
                far = int(np.argmax(dist))
                new[j] = points[far]
                labels[far] = j
                dist[far] = 0.0
        shift = float(np.sqrt(((new - centers) ** 2).sum(axis=1)).max())
        centers = new
        labels, dist = _assign(points, centers)
        history.append(float(dist.sum()))
        if shift < tol:
            break
    return KmeansResult(centers, labels, history[-1], history, it)


def init_rbfdd(latent, H: int, seed: int) -> RbfddParams:
    """Kernel centers from k-means, spreads from cluster radii, uniform weights 1/H."""
    latent = np.ascontiguousarray(latent, dtype=np.float64)
    if latent.ndim != 2:
        raise ShapeError(f"latent must be (N, D), got {latent.shape}")
    if latent.shape[0] < H:
        raise ValueError(f"need at least H={H} points for pre-training, got {latent.shape[0]}")
    km = kmeans(latent, H, seed)
    centers = km.centers

    if H > 1:
        d = np.sqrt(squared_distances(centers, centers))
        mean_between = d[np.triu_indices(H, 1)].mean()
    else:
        mean_between = 0.0
    fallback = 0.5 * mean_between if mean_between > 0 else 1.0

    spreads = np.full(H, fallback)
    dist = np.sqrt(squared_distances(latent, centers)[np.arange(latent.shape[0]), km.assignments])
    for h in range(H):
        members = km.assignments == h
        if members.sum() > 1:
            radius = dist[members].mean()
            if radius > 0:
                spreads[h] = radius
    return RbfddParams(centers, spreads, np.full(H, 1.0 / H))
