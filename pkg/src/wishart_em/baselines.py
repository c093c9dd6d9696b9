"""Comparison classifiers and the Rand index.

The eigen-feature methods cluster the descending eigenvalue vector of each
matrix; the Log-Euclidean rule assigns each matrix to the nearest plug-in
mean in the matrix-log Frobenius distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import spd
from .errors import DimensionMismatch, LengthMismatch

GMM_REG = 1e-6


def rand_index(a, b) -> float:
    """Fraction of observation pairs on which two partitions agree."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch(f"partitions differ in length: {a.shape} vs {b.shape}")
    n = a.size
    if n < 2:
        raise LengthMismatch("need at least two observations")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)

    def pairs(x):
        return int(np.sum(x * (x - 1) // 2))

    together_both = pairs(table)
    together_a = pairs(table.sum(axis=1))
    together_b = pairs(table.sum(axis=0))
    total = n * (n - 1) // 2
    apart_both = total - together_a - together_b + together_both
    return (together_both + apart_both) / total


def eigen_features(matrices) -> np.ndarray:
    """Descending eigenvalues of each matrix, (T, p)."""
    mats = spd.symmetrize(np.asarray(matrices, dtype=float))
    return np.linalg.eigvalsh(mats)[:, ::-1]


def log_euclidean_classify(matrices, means) -> np.ndarray:
    mats = np.asarray(matrices, dtype=float)
    means = np.asarray(means, dtype=float)
    if mats.shape[1:] != means.shape[1:]:
        raise DimensionMismatch("data and means differ in dimension")
    log_a = np.array([spd.matrix_log(m) for m in mats])
    log_s = np.array([spd.matrix_log(m) for m in means])
    dist = np.sum((log_a[:, None] - log_s[None]) ** 2, axis=(2, 3))
    return np.argmin(dist, axis=1) + 1


# -- K-means -----------------------------------------------------------------

@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    wcss: float
    iterations: int


def _kmeans_pp(x: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(x.shape[0])]]
    for _ in range(1, K):
        d2 = np.min(np.sum((x[:, None] - np.array(centers)[None]) ** 2, axis=2), axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(x[rng.integers(x.shape[0])])
        else:
            centers.append(x[rng.choice(x.shape[0], p=d2 / total)])
    return np.array(centers)


def lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int = 300) -> KMeansResult:
    centers = centers.copy()
    labels = np.full(x.shape[0], -1)
    for it in range(1, max_iter + 1):
        d2 = np.sum((x[:, None] - centers[None]) ** 2, axis=2)
        new = np.argmin(d2, axis=1)
        for k in range(centers.shape[0]):
            members = new == k
            if not members.any():
                # re-seed an empty centroid at the point farthest from its own center
                far = int(np.argmax(d2[np.arange(x.shape[0]), new]))
                centers[k] = x[far]
                new[far] = k
                d2[far] = 0.0
            centers[k] = x[new == k].mean(axis=0)
        if np.array_equal(new, labels):
            break
        labels = new
    wcss = float(np.sum((x - centers[labels]) ** 2))
    return KMeansResult(labels + 1, centers, wcss, it)


def kmeans(x: np.ndarray, K: int, seed=None, restarts: int = 10) -> KMeansResult:
    x = np.asarray(x, dtype=float)
    if not 1 <= K <= x.shape[0]:
        raise ValueError(f"need 1 <= K <= T, got K={K}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        res = lloyd(x, _kmeans_pp(x, K, rng))
        if best is None or res.wcss < best.wcss:
            best = res
    return best


def kmeans_eigen(matrices, K: int, seed=None, restarts: int = 10) -> np.ndarray:
    return kmeans(eigen_features(matrices), K, seed, restarts).labels


# -- Gaussian mixture ----------------------------------------------------------

@dataclass
class GMMResult:
    labels: np.ndarray
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    loglik_trace: list
    resets: int


def _component_logpdf(x, mean, cov):
    low = np.linalg.cholesky(cov)
    z = np.linalg.solve(low, (x - mean).T)
    d = x.shape[1]
    return -0.5 * np.sum(z * z, axis=0) - np.sum(np.log(np.diag(low))) - 0.5 * d * np.log(2 * np.pi)


def _log_joint(x, weights, means, covs):
    with np.errstate(divide="ignore"):
        lw = np.log(weights)
    return np.column_stack([lw[k] + _component_logpdf(x, means[k], covs[k]) for k in range(len(weights))])


def gmm_em(x: np.ndarray, labels0: np.ndarray, K: int, max_iter: int = 500,
           tol: float = 1e-10) -> GMMResult:
    """EM for a full-covariance mixture started from a hard assignment (0-based)."""
    T, d = x.shape
    eye = GMM_REG * np.eye(d)
    pooled = np.cov(x, rowvar=False).reshape(d, d) + eye
    resp = np.zeros((T, K))
    resp[np.arange(T), labels0] = 1.0
    trace = []
    resets = 0
    for _ in range(max_iter):
        nk = resp.sum(axis=0)
        weights = nk / T
        means = (resp.T @ x) / np.maximum(nk, 1e-300)[:, None]
        covs = np.empty((K, d, d))
        for k in range(K):
            diff = x - means[k]
            cov = (resp[:, k, None] * diff).T @ diff / max(nk[k], 1e-300) + eye
            if nk[k] < 1e-8 * T or not spd.is_spd(cov):
                cov = pooled
                resets += 1
            covs[k] = cov
        joint = _log_joint(x, weights, means, covs)
        norm = logsumexp(joint, axis=1)
        trace.append(float(norm.sum()))
        resp = np.exp(joint - norm[:, None])
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < tol * max(1.0, abs(trace[-1])):
            break
    labels = np.argmax(resp, axis=1) + 1
    return GMMResult(labels, weights, means, covs, trace, resets)


def gmm(x: np.ndarray, K: int, seed=None, restarts: int = 10) -> GMMResult:
    x = np.asarray(x, dtype=float)
    if not 1 <= K <= x.shape[0]:
        raise ValueError(f"need 1 <= K <= T, got K={K}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        start = lloyd(x, _kmeans_pp(x, K, rng)).labels - 1
        res = gmm_em(x, start, K)
        if best is None or res.loglik_trace[-1] > best.loglik_trace[-1]:
            best = res
    return best


def gmm_eigen(matrices, K: int, seed=None, restarts: int = 10) -> np.ndarray:
    return gmm(eigen_features(matrices), K, seed, restarts).labels
