"""Reflectance clustering on the shadow-free (u, v) plane."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .colorspace import UvbImage

HIST_BIN = 0.03
COV_FLOOR = 1e-6
HIST_SMOOTH = 1.0  # Gaussian blur of the count histogram, in bins


@dataclass
class ReflectanceClustering:
    k: int
    labels: np.ndarray       # (h, w) ints in [0, k)
    means: np.ndarray        # (k, 2)
    covariances: np.ndarray  # (k, 2, 2)
    pc: np.ndarray           # (h, w) posterior responsibility of the assigned label
    meta: dict = field(default_factory=dict)


def uv_histogram(uvb: UvbImage, bin_width: float = HIST_BIN) -> np.ndarray:
    bins = np.floor(np.stack([uvb.u.ravel(), uvb.v.ravel()], axis=1) / bin_width).astype(np.int64)
    bins -= bins.min(axis=0)
    shape = tuple(bins.max(axis=0) + 1)
    hist = np.zeros(shape, dtype=np.int64)
    np.add.at(hist, (bins[:, 0], bins[:, 1]), 1)
    return hist


def count_clusters(uvb: UvbImage, bin_width: float = HIST_BIN,
                   min_count: int = 5, min_fraction: float = 1e-3,
                   smooth: float = HIST_SMOOTH) -> int:
    """Number of local maxima of the (u, v) histogram above a noise floor.

    Maxima are found on the histogram blurred by a Gaussian of ``smooth``
    bins, which removes the ripples that soft-shadow tails leave along a
    cluster.  A bin is a maximum when no 8-neighbour exceeds it; touching
    maxima of equal height (plateaus) count once.  The floor applies to the
    raw counts.
    """
    # a zero ring lets border bins be compared with their blurred outer neighbours
    hist = np.pad(uv_histogram(uvb, bin_width), 1)
    floor = max(min_count, min_fraction * hist.sum())
    hs = ndimage.gaussian_filter(hist.astype(float), smooth, mode="constant") if smooth > 0 else hist
    padded = np.pad(hs, 1, constant_values=-1)
    neigh_max = ndimage.maximum_filter(padded, size=3, mode="constant", cval=-1)[1:-1, 1:-1]
    peaks = (hs >= neigh_max) & (hist >= floor)
    _, count = ndimage.label(peaks, structure=np.ones((3, 3)))
    return max(1, int(count))


def _kmeans_pp(X, k, rng):
    centers = [X[rng.integers(len(X))]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(len(X))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, len(X) - 1)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers, dtype=float)


def kmeans(X, k, seed=0, max_iter=300, tol=1e-7):
    """Lloyd's k-means with k-means++ seeding.

    Returns ``(labels, centers, objective_history)``; an emptied cluster is
    re-seeded at the point farthest from its current centre.
    """
    X = np.asarray(X, dtype=float)
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(X, k, rng)
    history = []
    labels = np.zeros(len(X), dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(len(X)), labels].sum()))
        counts = np.bincount(labels, minlength=k)
        new = np.empty_like(centers)
        for j in range(k):
            new[j] = X[labels == j].mean(axis=0) if counts[j] else centers[j]
        for j in np.flatnonzero(counts == 0):
            far = int(np.argmax(d2[np.arange(len(X)), labels]))
            new[j] = X[far]
            labels[far] = j
        shift = np.abs(new - centers).max()
        centers = new
        if shift < tol:
            break
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    history.append(float(d2[np.arange(len(X)), labels].sum()))
    return labels, centers, history


def responsibilities(X, means, covariances):
    """Posterior of each Gaussian component under uniform priors, shape (n, k)."""
    k = len(means)
    logp = np.empty((len(X), k))
    for j in range(k):
        cov = covariances[j]
        diff = X - means[j]
        sol = np.linalg.solve(cov, diff.T).T
        logp[:, j] = -0.5 * (diff * sol).sum(axis=1) - 0.5 * np.log(np.linalg.det(cov))
    logp -= logp.max(axis=1, keepdims=True)
    p = np.exp(logp)
    return p / p.sum(axis=1, keepdims=True)


def cluster_reflectance(uvb: UvbImage, k: int, seed: int = 0,
                        max_iter: int = 300, tol: float = 1e-7,
                        cov_floor: float = COV_FLOOR) -> ReflectanceClustering:
    X = np.stack([uvb.u.ravel(), uvb.v.ravel()], axis=1)
    if k < 1 or len(X) < k:
        raise ValueError(f"need 1 <= k <= pixel count, got k={k}, n={len(X)}")
    labels, centers, history = kmeans(X, k, seed=seed, max_iter=max_iter, tol=tol)
    means = np.empty((k, 2))
    covs = np.empty((k, 2, 2))
    for j in range(k):
        pts = X[labels == j]
        means[j] = pts.mean(axis=0) if len(pts) else centers[j]
        c = np.cov(pts.T, bias=True) if len(pts) > 1 else np.zeros((2, 2))
        covs[j] = c + cov_floor * np.eye(2)
    resp = responsibilities(X, means, covs)
    pc = resp[np.arange(len(X)), labels]
    shape = uvb.shape
    return ReflectanceClustering(
        k=k, labels=labels.reshape(shape), means=means, covariances=covs,
        pc=pc.reshape(shape),
        meta={"seed": seed, "max_iter": max_iter, "tol": tol, "objective": history})
