"""Lloyd's k-means with k-means++ seeding."""

from __future__ import annotations

import numpy as np

from .errors import ContractError


def kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with a center
            idx = rng.integers(n)
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers, dtype=float)


def assign(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Index of the nearest center for every row (lowest index on ties)."""
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
    return np.argmin(d2, axis=1)


def kmeans(
    X: np.ndarray, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-6
) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(centers, labels)``.

    Stops when no center moves by more than ``tol`` (Euclidean) or after
    ``max_iter`` Lloyd iterations. A center that loses all its points stays
    where it was; callers decide what to do with empty clusters.
    """
    X = np.asarray(X, dtype=float)
    if k < 1:
        raise ContractError("k must be >= 1")
    if k > len(X):
        raise ContractError(f"k={k} exceeds the number of rows ({len(X)})")
    rng = np.random.default_rng(seed)
    centers = kmeans_pp_init(X, k, rng)
    labels = assign(X, centers)
    for _ in range(max_iter):
        new = centers.copy()
        for c in range(k):
            members = X[labels == c]
            if len(members):
                new[c] = members.mean(axis=0)
        shift = np.sqrt(((new - centers) ** 2).sum(axis=1)).max()
        centers = new
        labels = assign(X, centers)
        if shift <= tol:
            break
    return centers, labels
