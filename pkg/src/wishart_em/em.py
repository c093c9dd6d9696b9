"""Pairwise composite-likelihood EM for the spatial Wishart mixture.

Each retained pair ``(t, s)`` contributes the weighted mixture term

    g_ts(j_t, j_s) = (f(a_t, a_s | S_{j_t}, S_{j_s}, phi, M) w_{j_t} w_{j_s})^{p_ts}

and the observed composite log-likelihood is ``sum_ts log sum_{j_t,j_s} g_ts``.
The E-step normalizes ``g_ts`` over the K x K latent pair; the M-step updates
the mixture weights in closed form and ``(phi, M)`` by quasi-Newton.

The group means are plug-in inputs and are never re-estimated.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from . import spd
from .dataset import Dataset, scaled_distances, write_labels
from .density import RHO_MAX, coupling_scale, pair_log_density
from .errors import DomainError, EmptyPlan, NumericalUnderflow
from .optimize import minimize_lbfgs
from .special import HypergeomConfig, Hyp0F1, log_multigamma, product_eigenvalues

DEFAULT_HYPERGEOM = HypergeomConfig(method="auto")
ASCENT_SLACK = 1e-9
FD_STEP = 1e-5


@dataclass(frozen=True)
class ModelParams:
    dof: float
    weights: tuple
    phi: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", tuple(float(v) for v in w))
        if w.ndim != 1 or w.size < 1 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError("weights must be a simplex vector")
        if not (self.phi > 0 and np.isfinite(self.phi)):
            raise DomainError(f"phi must be positive and finite, got {self.phi}")
        if not np.isfinite(self.dof):
            raise DomainError("dof must be finite")

    def check_dim(self, p: int) -> None:
        if not self.dof > p - 1:
            raise DomainError(f"dof must exceed p - 1 = {p - 1}, got {self.dof}")

    def to_dict(self) -> dict:
        return {"dof": self.dof, "weights": list(self.weights), "phi": self.phi}


# -- pair plan -----------------------------------------------------------------

@dataclass(frozen=True)
class PairWeightPlan:
    """Retained pairs ``t < s`` (0-based) with weights ``p_ts`` summing to 1."""

    pairs: np.ndarray
    weights: np.ndarray
    distances: np.ndarray
    lam: float
    u: float
    seed: int | None
    T: int

    def __len__(self):
        return self.pairs.shape[0]

    @property
    def entries(self) -> list[tuple[int, int, float]]:
        return [(int(t), int(s), float(w)) for (t, s), w in zip(self.pairs, self.weights)]


def retained_count(T: int, u: float) -> int:
    # rounding guards against u * n landing a hair below an integer
    return math.floor(round(u * T * (T - 1) / 2, 9))


def build_weight_plan(covariates: np.ndarray, lam: float, u: float, seed=None) -> PairWeightPlan:
    """Choose ``floor(u T(T-1)/2)`` pairs uniformly and weight them by ``exp(-d / lam)``.

    Distances are the covariate distances scaled by their maximum, the same
    scale the correlation kernel sees.
    """
    covariates = np.atleast_2d(np.asarray(covariates, dtype=float))
    if covariates.shape[0] == 1 and covariates.size > 1:
        covariates = covariates.T
    T = covariates.shape[0]
    if T < 2:
        raise EmptyPlan("need at least two observations")
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    if not 0 < u <= 1:
        raise DomainError(f"u must lie in (0, 1], got {u}")
    n_keep = retained_count(T, u)
    if n_keep == 0:
        raise EmptyPlan(f"u={u} retains no pairs for T={T}")
    t_idx, s_idx = np.triu_indices(T, k=1)
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(t_idx.size, size=n_keep, replace=False))
    pairs = np.column_stack([t_idx[keep], s_idx[keep]])
    dist = scaled_distances(covariates)[pairs[:, 0], pairs[:, 1]]
    logw = -(dist - dist.min()) / lam
    w = np.exp(logw - logsumexp(logw))
    return PairWeightPlan(pairs, w, dist, float(lam), float(u), seed, T)


# -- cached pair likelihood --------------------------------------------------

class PairLikelihood:
    """All K x K pair log densities for a fixed dataset, means and plan.

    Everything that does not depend on ``(phi, M)`` is precomputed: whitened
    log-determinants and traces per (observation, group) and the eigenvalues
    of ``U_s U_t`` per (pair, j_t, j_s).  Evaluations are memoized by
    ``(phi, M)``.
    """

    def __init__(self, data: Dataset, means: np.ndarray, plan: PairWeightPlan,
                 cfg: HypergeomConfig | None = None):
        means = np.asarray(means, dtype=float)
        if means.ndim != 3 or means.shape[1:] != (data.p, data.p):
            raise DomainError(f"means must be K x {data.p} x {data.p}")
        if plan.T != data.T:
            raise DomainError("plan was built for a different number of observations")
        self.data, self.plan = data, plan
        self.cfg = cfg or DEFAULT_HYPERGEOM
        self.p, self.K = data.p, means.shape[0]
        low = np.array([spd.cholesky(s) for s in means])
        self.logdet_means = 2.0 * np.sum(np.log(np.diagonal(low, axis1=1, axis2=2)), axis=1)
        # whitened observations U[t, k] = L_k^{-1} a_t L_k^{-T}
        inv = np.linalg.inv(low)
        u = spd.symmetrize(inv[None] @ data.matrices[:, None] @ np.swapaxes(inv, -1, -2)[None])
        self.logdet_u = np.linalg.slogdet(u)[1]
        self.trace_u = np.trace(u, axis1=2, axis2=3)
        t, s = plan.pairs[:, 0], plan.pairs[:, 1]
        u_t = u[t][:, :, None]
        u_s = u[s][:, None, :]
        eig = product_eigenvalues(np.broadcast_to(u_s, (len(plan), self.K, self.K, self.p, self.p)),
                                  np.broadcast_to(u_t, (len(plan), self.K, self.K, self.p, self.p)))
        self.hyp = Hyp0F1(eig.reshape(-1, self.p), self.cfg)
        self._cache: dict[tuple[float, float], np.ndarray] = {}

    def with_plan(self, plan: PairWeightPlan) -> "PairLikelihood":
        """Share the precomputed pair statistics with a plan over the same pairs."""
        if plan.pairs.shape != self.plan.pairs.shape or np.any(plan.pairs != self.plan.pairs):
            raise DomainError("plan retains different pairs")
        other = object.__new__(PairLikelihood)
        other.__dict__.update(self.__dict__)
        other.plan = plan
        other._cache = {}
        return other

    def rho(self, phi: float) -> np.ndarray:
        return np.minimum(np.exp(-self.plan.distances / phi), RHO_MAX)

    def log_density(self, phi: float, dof: float) -> np.ndarray:
        key = (float(phi), float(dof))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if not dof > self.p - 1:
            raise DomainError(f"dof must exceed p - 1, got {dof}")
        n, K = len(self.plan), self.K
        rho = self.rho(phi)
        scale = np.repeat(coupling_scale(rho, dof), K * K)
        log0f1 = self.hyp.log_value(dof / 2.0, scale).reshape(n, K, K)
        t, s = self.plan.pairs[:, 0], self.plan.pairs[:, 1]
        out = pair_log_density(
            log0f1,
            self.logdet_u[t][:, :, None], self.logdet_u[s][:, None, :],
            self.trace_u[t][:, :, None], self.trace_u[s][:, None, :],
            self.logdet_means[None, :, None], self.logdet_means[None, None, :],
            dof, rho[:, None, None], self.p,
        )
        if len(self._cache) > 64:
            self._cache.clear()
        self._cache[key] = out
        return out

    def marginal_log_density(self, dof: float) -> np.ndarray:
        """``log f_W(a_t | S_k, M)`` as a T x K array."""
        p, m = self.p, dof
        logdet_a = self.logdet_u + self.logdet_means[None, :]
        return (
            (m - p - 1) / 2 * logdet_a
            - m / 2 * self.trace_u
            - m * p / 2 * math.log(2.0)
            - m / 2 * (self.logdet_means[None, :] - p * math.log(m))
            - log_multigamma(p, m / 2)
        )


# -- E-step and objective ----------------------------------------------------

@dataclass
class ResponsibilityTable:
    pairs: np.ndarray
    blocks: np.ndarray
    pair_weights: np.ndarray

    def __getitem__(self, key):
        t, s = key
        hit = np.flatnonzero((self.pairs[:, 0] == t) & (self.pairs[:, 1] == s))
        if hit.size == 0:
            raise KeyError(key)
        return self.blocks[hit[0]]

    @property
    def entries(self) -> dict:
        return {(int(t), int(s)): b for (t, s), b in zip(self.pairs, self.blocks)}


def _log_weights(weights) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(weights, dtype=float))


def _log_terms(logf: np.ndarray, weights, pair_weights: np.ndarray) -> np.ndarray:
    lw = _log_weights(weights)
    joint = logf + lw[None, :, None] + lw[None, None, :]
    return pair_weights[:, None, None] * joint


def _responsibilities(logf, weights, plan: PairWeightPlan) -> ResponsibilityTable:
    terms = _log_terms(logf, weights, plan.weights)
    n = terms.shape[0]
    flat = terms.reshape(n, -1)
    norm = logsumexp(flat, axis=1)
    if not np.all(np.isfinite(norm)):
        raise NumericalUnderflow("every latent pair has zero weight for some observation pair")
    blocks = np.exp(flat - norm[:, None]).reshape(terms.shape)
    return ResponsibilityTable(plan.pairs, blocks, plan.weights)


def _composite_loglik(logf, weights, plan: PairWeightPlan) -> float:
    terms = _log_terms(logf, weights, plan.weights)
    return float(np.sum(logsumexp(terms.reshape(terms.shape[0], -1), axis=1)))


def _q_phi(lik: PairLikelihood, resp: ResponsibilityTable, phi: float, dof: float) -> float:
    logf = lik.log_density(phi, dof)
    return float(np.sum(resp.pair_weights[:, None, None] * resp.blocks * logf))


def e_step(data: Dataset, means, params: ModelParams, plan: PairWeightPlan,
           cfg: HypergeomConfig | None = None) -> ResponsibilityTable:
    params.check_dim(data.p)
    lik = PairLikelihood(data, means, plan, cfg)
    return _responsibilities(lik.log_density(params.phi, params.dof), params.weights, plan)


def m_step_weights(resp: ResponsibilityTable) -> np.ndarray:
    """Column-index marginal of the responsibilities over all retained pairs."""
    col = resp.blocks.sum(axis=(0, 1))
    return col / resp.blocks.shape[0]


def weighted_weight_update(resp: ResponsibilityTable) -> np.ndarray:
    """Exact maximizer of the surrogate in the weights.

    Both latent indices of a pair carry a factor ``w`` raised to ``p_ts``, so
    the maximizer pools row and column marginals weighted by ``p_ts``.
    """
    pw = resp.pair_weights[:, None]
    pooled = np.sum(pw * (resp.blocks.sum(axis=2) + resp.blocks.sum(axis=1)), axis=0)
    return pooled / pooled.sum()


@dataclass
class PhiUpdate:
    phi: float
    dof: float
    objective: float
    start_objective: float
    success: bool
    message: str


def _to_free(phi, dof, p):
    return np.array([math.log(phi), math.log(dof - (p - 1))])


def _from_free(x, p):
    return math.exp(x[0]), (p - 1) + math.exp(x[1])


def _phi_step(lik: PairLikelihood, resp: ResponsibilityTable, phi: float, dof: float,
              max_iter: int = 30) -> PhiUpdate:
    p = lik.p
    start = _q_phi(lik, resp, phi, dof)

    def neg_q(x):
        if np.any(np.abs(x) > 50):
            return np.inf
        ph, m = _from_free(x, p)
        val = _q_phi(lik, resp, ph, m)
        return -val if np.isfinite(val) else np.inf

    res = minimize_lbfgs(neg_q, _to_free(phi, dof, p), max_iter=max_iter, fd_step=FD_STEP)
    new_phi, new_dof = _from_free(res.x, p)
    value = -res.fun
    if not (np.isfinite(value) and value >= start - ASCENT_SLACK):
        return PhiUpdate(phi, dof, start, start, False, f"rejected: {res.message}")
    return PhiUpdate(new_phi, new_dof, value, start, res.success, res.message)


def m_step_phi(data: Dataset, means, resp: ResponsibilityTable, plan: PairWeightPlan,
               current: tuple[float, float], cfg: HypergeomConfig | None = None) -> PhiUpdate:
    """Quasi-Newton ascent of ``sum_ts p_ts sum T log f`` over ``(phi, M)``.

    ``current`` is ``(phi, M)``.  Works on ``log phi`` and ``log(M - (p - 1))``;
    if the line search fails the current point comes back with ``success=False``.
    """
    phi, dof = current
    lik = PairLikelihood(data, means, plan, cfg)
    return _phi_step(lik, resp, phi, dof)


# -- classifier ----------------------------------------------------------------

def _group_logsumexp(index: np.ndarray, values: np.ndarray, n_groups: int) -> np.ndarray:
    """Row-wise log-sum-exp of ``values`` (N x K) grouped by ``index``."""
    K = values.shape[1]
    top = np.full((n_groups, K), -np.inf)
    np.maximum.at(top, index, values)
    safe = np.where(np.isfinite(top), top, 0.0)
    acc = np.zeros((n_groups, K))
    np.add.at(acc, index, np.exp(values - safe[index]))
    with np.errstate(divide="ignore"):
        return np.log(acc) + safe


def _classify(lik: PairLikelihood, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    T, K = lik.data.T, lik.K
    plan = lik.plan
    terms = _log_terms(lik.log_density(params.phi, params.dof), params.weights, plan.weights)
    # observation t in the first slot: fix j_t = k, sum over j_s; second slot: the reverse
    first = logsumexp(terms, axis=2)
    second = logsumexp(terms, axis=1)
    index = np.concatenate([plan.pairs[:, 0], plan.pairs[:, 1]])
    log_g = _group_logsumexp(index, np.concatenate([first, second]), T)
    covered = np.zeros(T, dtype=bool)
    covered[index] = True
    # observations in no retained pair fall back to the marginal posterior
    if not covered.all():
        marginal = lik.marginal_log_density(params.dof) + _log_weights(params.weights)[None, :]
        log_g[~covered] = marginal[~covered]
    norm = logsumexp(log_g, axis=1, keepdims=True)
    if not np.all(np.isfinite(norm)):
        raise NumericalUnderflow("classifier row has no finite term")
    G = np.exp(log_g - norm)
    labels = np.argmax(G, axis=1) + 1  # argmax returns the first maximum
    return G, labels


def classify(data: Dataset, means, params: ModelParams, plan: PairWeightPlan,
             cfg: HypergeomConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Posterior-style group scores ``G`` (T x K, rows sum to 1) and labels 1..K."""
    params.check_dim(data.p)
    return _classify(PairLikelihood(data, means, plan, cfg), params)


# -- driver --------------------------------------------------------------------

@dataclass
class FitResult:
    params: ModelParams
    responsibilities: ResponsibilityTable
    classifier: np.ndarray
    labels: np.ndarray
    composite_loglik_trace: list
    converged: bool
    iterations: int
    notes: list = field(default_factory=list)
    wall_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "composite_loglik_trace": [float(v) for v in self.composite_loglik_trace],
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "labels": [int(v) for v in self.labels],
            "classifier": np.asarray(self.classifier).tolist(),
            "notes": list(self.notes),
            "wall_seconds": float(self.wall_seconds),
        }

    def save(self, directory: str | Path) -> Path:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "fit.json", "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
        write_labels(out / "labels.csv", self.labels)
        return out


def default_init(data: Dataset, K: int) -> ModelParams:
    """Uniform weights, phi = median scaled pairwise distance, M = p + 2."""
    d = data.distances[np.triu_indices(data.T, k=1)]
    phi = float(np.median(d)) if d.size and np.median(d) > 0 else 1.0
    return ModelParams(dof=float(data.p + 2), weights=tuple([1.0 / K] * K), phi=phi)


def fit(data: Dataset, means, init: ModelParams | None = None, plan: PairWeightPlan | None = None,
        cfg: HypergeomConfig | None = None, max_iter: int = 200, tol: float = 1e-6,
        lam: float = 1.25, u: float = 1.0, seed=None,
        likelihood: PairLikelihood | None = None) -> FitResult:
    """Run the composite EM to convergence.

    If ``plan`` is omitted one is built from ``lam``, ``u`` and ``seed``.
    A ``likelihood`` built for the same data, means and retained pairs may be
    passed to reuse its precomputation (for example across a lambda grid).
    Stops when the relative change of the observed composite log-likelihood
    drops below ``tol`` or after ``max_iter`` iterations.
    """
    started = time.perf_counter()
    if max_iter < 1 or not tol > 0:
        raise ValueError("need max_iter >= 1 and tol > 0")
    means = np.asarray(means, dtype=float)
    K = means.shape[0]
    if plan is None:
        plan = build_weight_plan(data.covariates, lam, u, seed)
    params = init or default_init(data, K)
    if len(params.weights) != K:
        raise DomainError("init weights do not match the number of means")
    params.check_dim(data.p)
    if likelihood is not None:
        lik = likelihood.with_plan(plan)
    else:
        lik = PairLikelihood(data, means, plan, cfg)

    logf = lik.log_density(params.phi, params.dof)
    current = _composite_loglik(logf, params.weights, plan)
    trace = [current]
    notes: list[str] = []
    converged = False
    iterations = 0
    resp = _responsibilities(logf, params.weights, plan)
    for it in range(1, max_iter + 1):
        iterations = it
        weights = m_step_weights(resp)
        step = _phi_step(lik, resp, params.phi, params.dof)
        if not step.success:
            notes.append(f"iteration {it}: phi step {step.message}")
        logf = lik.log_density(step.phi, step.dof)
        value = _composite_loglik(logf, weights, plan)
        if value < current:
            # the column-marginal weight update is not the surrogate maximizer
            weights = weighted_weight_update(resp)
            value = _composite_loglik(logf, weights, plan)
            notes.append(f"iteration {it}: used p-weighted weight update")
        if value < current:
            notes.append(f"iteration {it}: no ascent, keeping previous estimate")
            converged = True
            break
        weights = np.clip(weights, 0.0, None)
        params = ModelParams(dof=step.dof, weights=tuple(weights / weights.sum()), phi=step.phi)
        trace.append(value)
        change = abs(value - current) / max(abs(current), 1e-300)
        current = value
        resp = _responsibilities(logf, params.weights, plan)
        if change < tol:
            converged = True
            break

    G, labels = _classify(lik, params)
    return FitResult(params, resp, G, labels, trace, converged, iterations, notes,
                     time.perf_counter() - started)


def composite_loglik(data: Dataset, means, params: ModelParams, plan: PairWeightPlan,
                     cfg: HypergeomConfig | None = None) -> float:
    params.check_dim(data.p)
    lik = PairLikelihood(data, means, plan, cfg)
    return _composite_loglik(lik.log_density(params.phi, params.dof), params.weights, plan)
