"""Sampler for the hierarchical spatial Wishart mixture.

For covariates ``X_t`` with scaled distances ``d_ts`` and a correlation
kernel ``K(d; phi)``, the generative model is

    Z_t ~ Discrete(omega)
    z_jt ~ GP(0, K(d; phi) I_p),      j = 1..M
    U_t = (1/M) sum_j z_jt z_jt^T     (a Wishart process, E U_t = I)
    A_t = L U_t L^T,                  L = chol(S_{Z_t})

so that each ``A_t`` is marginally ``W_p(S_{Z_t}, M)`` with mean ``S_{Z_t}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import spd
from .dataset import Dataset, scaled_distances
from .errors import DomainError, NotPositiveDefinite

JITTER_START = 1e-10
JITTER_CAP = 1e-6
MAX_CONDITION = 1e6


def exp_correlation(distance, phi: float):
    """Exponential correlation ``exp(-d / phi)``."""
    if not phi > 0:
        raise DomainError(f"phi must be positive, got {phi}")
    distance = np.asarray(distance, dtype=float)
    if np.any(distance < 0):
        raise DomainError("distances must be nonnegative")
    out = np.exp(-distance / phi)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SimConfig:
    T: int = 50
    p: int = 3
    K: int = 3
    M: float = 5
    phi: float = 1.0
    weights: tuple = ()
    covariate_dim: int = 10
    seed: int = 0
    kernel: Callable = field(default=exp_correlation, compare=False, repr=False)

    def __post_init__(self):
        if not self.weights:
            object.__setattr__(self, "weights", tuple([1.0 / self.K] * self.K))
        w = np.asarray(self.weights, dtype=float)
        if self.T < 2 or self.K < 1 or self.p < 1 or self.covariate_dim < 1:
            raise ValueError("need T >= 2, K >= 1, p >= 1, covariate_dim >= 1")
        if not self.M > self.p - 1:
            raise DomainError(f"M must exceed p - 1, got {self.M}")
        if not self.phi > 0:
            raise DomainError(f"phi must be positive, got {self.phi}")
        if w.shape != (self.K,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be K nonnegative values summing to 1")


@dataclass
class SimOutput:
    matrices: np.ndarray
    covariates: np.ndarray
    labels: np.ndarray
    group_means: np.ndarray
    residuals: np.ndarray

    def to_dataset(self, trained_means=None) -> Dataset:
        return Dataset(self.matrices, self.covariates, self.labels, self.group_means, trained_means)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _integer_dof(M) -> int:
    if float(M) != int(M) or int(M) < 1:
        raise DomainError(f"sampling needs a positive integer M, got {M}")
    return int(M)


def _jittered_cholesky(corr: np.ndarray) -> np.ndarray:
    eye = np.eye(corr.shape[0])
    jitter = JITTER_START
    while jitter <= JITTER_CAP * (1 + 1e-9):
        try:
            return spd.cholesky(corr + jitter * eye)
        except NotPositiveDefinite:
            jitter *= 10.0
    raise NotPositiveDefinite("correlation matrix not positive definite even with 1e-6 jitter")


def sample_correlated_gaussians(corr: np.ndarray, p: int, M: int, seed=None) -> np.ndarray:
    """Draw ``M`` replicates of ``p`` independent Gaussian processes over T sites.

    Returns an ``(M, T, p)`` array whose slices ``[j, :, c]`` are independent
    ``N(0, corr)`` vectors.
    """
    corr = np.atleast_2d(np.asarray(corr, dtype=float))
    M = _integer_dof(M)
    low = _jittered_cholesky(corr)
    noise = _rng(seed).standard_normal((M, corr.shape[0], p))
    return np.einsum("ts,jsc->jtc", low, noise)


def sample_wishart_process(corr: np.ndarray, p: int, M: int, seed=None) -> np.ndarray:
    """``U_t = (1/M) sum_j z_jt z_jt^T`` for correlated Gaussian replicates; (T, p, p)."""
    z = sample_correlated_gaussians(corr, p, M, seed)
    return np.einsum("jta,jtb->tab", z, z) / z.shape[0]


def sample_group_means(K: int, p: int, seed=None) -> np.ndarray:
    """K means drawn from ``W_p(I, p)``, redrawn until the condition number is below 1e6."""
    rng = _rng(seed)
    out = []
    while len(out) < K:
        z = rng.standard_normal((p, p))
        s = z.T @ z / p
        if np.linalg.cond(s) < MAX_CONDITION:
            out.append(spd.symmetrize(s))
    return np.array(out)


def simulate(cfg: SimConfig, group_means: np.ndarray | None = None) -> SimOutput:
    rng = np.random.default_rng(cfg.seed)
    M = _integer_dof(cfg.M)
    if group_means is None:
        group_means = sample_group_means(cfg.K, cfg.p, rng)
    group_means = np.asarray(group_means, dtype=float)
    if group_means.shape != (cfg.K, cfg.p, cfg.p):
        raise ValueError(f"group_means must be {(cfg.K, cfg.p, cfg.p)}, got {group_means.shape}")
    factors = np.array([spd.cholesky(s) for s in group_means])

    covariates = rng.uniform(0.0, 1.0, size=(cfg.T, cfg.covariate_dim))
    corr = cfg.kernel(scaled_distances(covariates), cfg.phi)
    labels = rng.choice(cfg.K, size=cfg.T, p=np.asarray(cfg.weights)) + 1
    residuals = sample_wishart_process(corr, cfg.p, M, rng)
    low = factors[labels - 1]
    matrices = spd.symmetrize(low @ residuals @ np.swapaxes(low, -1, -2))
    return SimOutput(matrices, covariates, labels, group_means, residuals)


def trained_means(cfg: SimConfig, group_means: np.ndarray, n_train: int = 10, seed=None) -> np.ndarray:
    """Plug-in group means: the sample mean of ``n_train`` fresh draws per group.

    Training draws are independent ``W_p(S_k, M)`` matrices, i.e. the
    model's marginal law with the spatial link switched off.
    """
    if n_train < 1:
        raise ValueError("n_train must be >= 1")
    rng = _rng(seed)
    M = _integer_dof(cfg.M)
    out = []
    for s in np.asarray(group_means, dtype=float):
        low = spd.cholesky(s)
        u = sample_wishart_process(np.eye(n_train), cfg.p, M, rng)
        draws = low @ u @ low.T
        out.append(spd.symmetrize(draws.mean(axis=0)))
    return np.array(out)


def variogram_constant(p: int, M: float) -> float:
    """``E||U_t - U_s||_F^2 / (1 - rho^2) = (2/M)(p + p^2)`` for the Wishart process."""
    return 2.0 / M * (p + p * p)


def simulate_replication(cfg: SimConfig, n_train: int = 10) -> Dataset:
    """One benchmark replication: simulated data plus trained means from the same seed."""
    out = simulate(cfg)
    train = trained_means(cfg, out.group_means, n_train, seed=np.random.SeedSequence([cfg.seed, 1]))
    return out.to_dataset(train)


__all__ = [
    "SimConfig", "SimOutput", "exp_correlation", "sample_correlated_gaussians",
    "sample_wishart_process", "sample_group_means", "simulate", "trained_means",
    "variogram_constant", "simulate_replication",
]
