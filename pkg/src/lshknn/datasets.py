"""Synthetic clustered datasets on the unit sphere."""

from __future__ import annotations

import numpy as np


def make_sphere_clusters(n_samples: int, dim: int = 64, n_clusters: int = 50,
                         spread: float = 0.1, random_state=0):
    """Gaussian blobs around random unit centres, projected back onto the sphere.

    ``spread`` is the per-coordinate noise scale; with ``dim`` coordinates the
    expected cosine between two members of one cluster is roughly
    ``1 / (1 + dim * spread**2)``. Points are assigned to clusters round-robin.

    Returns:
        ``(X, labels, centers)`` with ``X`` float32 and L2-normalized.
    """
    rng = np.random.default_rng(random_state)
    centers = rng.standard_normal((n_clusters, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    labels = np.arange(n_samples) % n_clusters
    x = centers[labels] + spread * rng.standard_normal((n_samples, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x.astype(np.float32), labels, centers


def make_queries(centers, dim: int | None = None, spread: float = 0.1, random_state=1):
    """One held-out query per cluster, drawn like the cluster members."""
    rng = np.random.default_rng(random_state)
    centers = np.asarray(centers)
    q = centers + spread * rng.standard_normal(centers.shape)
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return q.astype(np.float32), np.arange(centers.shape[0])
