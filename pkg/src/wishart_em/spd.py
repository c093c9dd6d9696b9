"""Symmetric positive-definite matrix algebra and (de)serialization.

Matrices are plain ``numpy`` arrays; :func:`as_spd` is the single entry point
that symmetrizes and validates them.  Everything here is a pure function.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConvergenceFailure, DimensionMismatch, NotPositiveDefinite

PIVOT_TOL = 1e-14
_ASYMMETRY_TOL = 1e-6


def symmetrize(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def _check_square(m: np.ndarray) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
        raise DimensionMismatch(f"expected a non-empty square matrix, got shape {m.shape}")


def cholesky(m: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor ``L`` with ``L @ L.T == m``.

    Raises
    ------
    NotPositiveDefinite
        If any pivot (squared diagonal of ``L``) is at or below ``1e-14``.
    """
    m = np.asarray(m, dtype=float)
    _check_square(m)
    m = symmetrize(m)
    if not np.all(np.isfinite(m)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    try:
        low = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    if np.any(np.diag(low) ** 2 <= PIVOT_TOL):
        raise NotPositiveDefinite("Cholesky pivot below 1e-14")
    return low


def is_spd(m: np.ndarray) -> bool:
    try:
        cholesky(m)
    except (NotPositiveDefinite, DimensionMismatch):
        return False
    return True


def as_spd(m: Sequence | np.ndarray) -> np.ndarray:
    """Return ``m`` as a symmetrized float array after checking it is SPD."""
    arr = np.array(m, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    _check_square(arr)
    scale = max(1.0, float(np.max(np.abs(arr))))
    if np.max(np.abs(arr - arr.T)) > _ASYMMETRY_TOL * scale:
        raise NotPositiveDefinite("matrix is not symmetric")
    arr = symmetrize(arr)
    cholesky(arr)
    return arr


def eigensystem(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues in descending order and matching orthonormal eigenvectors.

    Ties keep the order in which the symmetric solver returned them, so an
    identity input yields the identity basis.
    """
    m = np.asarray(m, dtype=float)
    _check_square(m)
    m = symmetrize(m)
    try:
        vals, vecs = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from None
    order = np.argsort(-vals, kind="stable")
    return vals[order], vecs[:, order]


def matrix_log(m: np.ndarray) -> np.ndarray:
    vals, vecs = eigensystem(m)
    if np.any(vals <= 0):
        raise NotPositiveDefinite("matrix_log needs strictly positive eigenvalues")
    return symmetrize((vecs * np.log(vals)) @ vecs.T)


def matrix_exp(m: np.ndarray) -> np.ndarray:
    """Exponential of a symmetric matrix (inverse of :func:`matrix_log`)."""
    vals, vecs = eigensystem(m)
    return symmetrize((vecs * np.exp(vals)) @ vecs.T)


def log_det(m: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(cholesky(m)))))


def frobenius_sq(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    return float(np.sum((a - b) ** 2))


def euclidean_distance(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DimensionMismatch(f"covariate dimensions differ: {x.shape} vs {y.shape}")
    return float(np.linalg.norm(x - y))


def pairwise_distances(x: np.ndarray) -> np.ndarray:
    """All Euclidean distances between the rows of ``x`` (T x d)."""
    x = np.asarray(x, dtype=float)
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def congruence_inverse(low: np.ndarray, a: np.ndarray) -> np.ndarray:
    """``low^{-1} a low^{-T}`` for a lower-triangular ``low``."""
    from scipy.linalg import solve_triangular

    half = solve_triangular(low, a, lower=True)
    return symmetrize(solve_triangular(low, half.T, lower=True))


# -- serialization -----------------------------------------------------------

def write_spd_csv(path: str | Path, matrices: Iterable[np.ndarray]) -> None:
    """Write matrices as stacked ``p``-row blocks of comma-separated decimals."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for m in matrices:
            for row in np.atleast_2d(m):
                writer.writerow([repr(float(v)) for v in row])


def read_spd_csv(path: str | Path, validate: bool = True) -> list[np.ndarray]:
    """Read stacked ``p x p`` blocks; ``p`` is the column count."""
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    if not rows:
        return []
    p = len(rows[0])
    if any(len(r) != p for r in rows) or len(rows) % p:
        raise DimensionMismatch(f"{path}: rows do not form {p}x{p} blocks")
    data = np.array(rows).reshape(-1, p, p)
    return [as_spd(m) if validate else symmetrize(m) for m in data]


def write_spd_json(path: str | Path, matrices: Iterable[np.ndarray]) -> None:
    with open(path, "w") as fh:
        json.dump([np.asarray(m, dtype=float).tolist() for m in matrices], fh)


def read_spd_json(path: str | Path) -> list[np.ndarray]:
    with open(path) as fh:
        data = json.load(fh)
    # a single matrix is an array of arrays of numbers
    if data and not isinstance(data[0][0], list):
        data = [data]
    return [as_spd(m) for m in data]
