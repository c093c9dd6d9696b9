"""Log densities of the mean-parameterized Wishart law and of a correlated pair.

A parameterized Wishart matrix ``W ~ W_p(Sigma, M)`` is the average (not the
sum) of ``M`` Gaussian outer products, so ``E[W] = Sigma``.  The pair density
couples two such matrices whose latent Gaussians have correlation ``rho``;
its coupling factor is a 0F1 of the product of the two whitened matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import spd
from .errors import DimensionMismatch, DomainError, RhoOutOfRange
from .special import HypergeomConfig, Hyp0F1, log_multigamma, product_eigenvalues

RHO_MAX = 1.0 - 1e-6


@dataclass(frozen=True)
class MarginalParams:
    mean: np.ndarray
    dof: float

    def __post_init__(self):
        mean = spd.as_spd(self.mean)
        object.__setattr__(self, "mean", mean)
        if not self.dof > mean.shape[0] - 1:
            raise DomainError(f"dof must exceed p - 1 = {mean.shape[0] - 1}, got {self.dof}")


@dataclass(frozen=True)
class PairParams:
    mean_t: np.ndarray
    mean_s: np.ndarray
    dof: float
    rho: float

    def __post_init__(self):
        mt = spd.as_spd(self.mean_t)
        ms = spd.as_spd(self.mean_s)
        if mt.shape != ms.shape:
            raise DimensionMismatch("pair means have different dimensions")
        object.__setattr__(self, "mean_t", mt)
        object.__setattr__(self, "mean_s", ms)
        if not self.dof > mt.shape[0] - 1:
            raise DomainError(f"dof must exceed p - 1 = {mt.shape[0] - 1}, got {self.dof}")
        if not 0.0 <= self.rho < 1.0:
            raise RhoOutOfRange(f"rho must lie in [0, 1), got {self.rho}")


def log_wishart_pdf(a: np.ndarray, params: MarginalParams) -> float:
    a = spd.as_spd(a)
    sigma = params.mean
    p = sigma.shape[0]
    if a.shape != sigma.shape:
        raise DimensionMismatch(f"matrix {a.shape} vs mean {sigma.shape}")
    m = params.dof
    low = spd.cholesky(sigma)
    whitened = spd.congruence_inverse(low, a)
    logdet_sigma = 2.0 * float(np.sum(np.log(np.diag(low))))
    return float(
        (m - p - 1) / 2 * spd.log_det(a)
        - m / 2 * np.trace(whitened)
        - m * p / 2 * math.log(2.0)
        - m / 2 * (logdet_sigma - p * math.log(m))
        - log_multigamma(p, m / 2)
    )


def coupling_scale(rho, dof):
    """Scalar multiplying ``U_s U_t`` inside the 0F1: ``(M rho / (1 - rho^2))^2 / 4``."""
    rho = np.asarray(rho, dtype=float)
    return 0.25 * (dof * rho / (1.0 - rho * rho)) ** 2


def pair_log_density(log_0f1, logdet_ut, logdet_us, trace_ut, trace_us,
                     logdet_mean_t, logdet_mean_s, dof, rho, p):
    """Assemble the pair log density from precomputed whitened statistics.

    ``logdet_u*`` and ``trace_u*`` are log-determinant and trace of the
    whitened matrices ``Q^{-1} a Q^{-T}`` (equal to those of ``S^{-1} a``);
    ``logdet_mean_*`` are ``log|S|``.  Broadcasts over all array arguments.
    """
    m = dof
    one_minus = 1.0 - np.asarray(rho, dtype=float) ** 2
    return (
        log_0f1
        - m * p * math.log(2.0)
        - 2.0 * log_multigamma(p, m / 2)
        + (m - p - 1) / 2 * (logdet_ut + logdet_us)
        - p * m / 2 * (np.log(one_minus) - 2.0 * math.log(m))
        - m / (2.0 * one_minus) * (trace_ut + trace_us)
        - (p + 1) / 2 * (logdet_mean_t + logdet_mean_s)
    )


def log_bivariate_pdf(a_t: np.ndarray, a_s: np.ndarray, params: PairParams,
                      cfg: HypergeomConfig | None = None) -> float:
    """Joint log density of a correlated pair ``(a_t, a_s)``.

    Raises
    ------
    RhoOutOfRange
        For ``rho >= 1 - 1e-6``; callers clamp, this layer does not.
    TruncationNotConverged
        Propagated from the 0F1 series in ``"series"`` mode.
    """
    a_t = spd.as_spd(a_t)
    a_s = spd.as_spd(a_s)
    p = params.mean_t.shape[0]
    if a_t.shape != (p, p) or a_s.shape != (p, p):
        raise DimensionMismatch("observations and means differ in dimension")
    if params.rho >= RHO_MAX:
        raise RhoOutOfRange(f"rho must be below {RHO_MAX}, got {params.rho}")
    q_t = spd.cholesky(params.mean_t)
    q_s = spd.cholesky(params.mean_s)
    u_t = spd.congruence_inverse(q_t, a_t)
    u_s = spd.congruence_inverse(q_s, a_s)
    m, rho = params.dof, params.rho
    scale = float(coupling_scale(rho, m))
    if scale > 0:
        eig = product_eigenvalues(u_s, u_t)
        log_0f1 = float(Hyp0F1(eig[None, :], cfg).log_value(m / 2, scale)[0])
    else:
        log_0f1 = 0.0
    return float(pair_log_density(
        log_0f1,
        spd.log_det(u_t), spd.log_det(u_s),
        np.trace(u_t), np.trace(u_s),
        2.0 * np.sum(np.log(np.diag(q_t))), 2.0 * np.sum(np.log(np.diag(q_s))),
        m, rho, p,
    ))
