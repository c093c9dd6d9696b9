"""Multivariate gamma and the hypergeometric function 0F1 of a matrix argument.

The matrix function is the real (alpha = 2) zonal-polynomial series

    0F1(a; X) = sum_k sum_{kappa |- k} C_kappa(X) / ((a)_kappa k!)

evaluated on the eigenvalues of ``X``.  Zonal polynomials are obtained from
Jack polynomials through the horizontal-strip recursion over variables
(Koev & Edelman 2006), with the coefficient tables built once per
``(p, max_weight)`` and shared.

For arguments too large for a truncated series (thousands of terms would be
needed), :class:`Hyp0F1` can switch smoothly to a saddle-point approximation of
the inverse-Laplace (Herz) integral representation, anchored to the series
at the edge of the range where the series is still converged.  The switch is controlled
by ``HypergeomConfig.method``:

``"series"``
    pure truncated series; raises :class:`TruncationNotConverged` when the
    tail is not negligible.
``"auto"``
    series for small arguments, saddle point for large ones, and a smooth
    blend in between so that the result is differentiable in the scale.
"""

from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln, logsumexp

from .errors import DomainError, TruncationNotConverged

ALPHA = 2.0  # real symmetric matrices


@dataclass(frozen=True)
class HypergeomConfig:
    max_weight: int = 60
    relative_tol: float = 1e-10
    method: str = "series"

    def __post_init__(self):
        if self.max_weight < 1:
            raise ValueError("max_weight must be >= 1")
        if not self.relative_tol > 0:
            raise ValueError("relative_tol must be positive")
        if self.method not in ("series", "auto"):
            raise ValueError(f"unknown method {self.method!r}")


def log_multigamma(p: int, a: float) -> float:
    """log Gamma_p(a) = log[pi^{p(p-1)/4} prod_j Gamma(a - (j-1)/2)]."""
    if a <= (p - 1) / 2:
        raise DomainError(f"log_multigamma needs a > (p-1)/2, got a={a}, p={p}")
    j = np.arange(p)
    return float(p * (p - 1) / 4 * math.log(math.pi) + np.sum(gammaln(a - j / 2)))


def scalar_hyp0f1(a: float, z: float) -> float:
    """Scalar 0F1(;a;z) by direct series summation to relative 1e-14."""
    if a <= 0:
        raise DomainError("scalar_hyp0f1 needs a > 0")
    total = 1.0
    term = 1.0
    k = 0
    while True:
        term *= z / ((a + k) * (k + 1))
        total += term
        k += 1
        # the terms decrease monotonically once k exceeds sqrt(|z|)
        if k > abs(z) ** 0.5 and abs(term) <= 1e-14 * abs(total):
            return total
        if k > 100000:
            return total


# -- partitions and coefficient tables ---------------------------------------

def partitions(max_weight: int, max_parts: int) -> list[tuple[int, ...]]:
    """Partitions with at most ``max_parts`` parts, ordered by weight."""
    out: list[tuple[int, ...]] = []

    def rec(prefix, remaining, largest):
        out.append(tuple(prefix))
        if len(prefix) == max_parts:
            return
        for v in range(min(remaining, largest), 0, -1):
            prefix.append(v)
            rec(prefix, remaining - v, v)
            prefix.pop()

    rec([], max_weight, max_weight)
    out.sort(key=lambda k: (sum(k), tuple(-v for v in k)))
    return out


def _hook_sums(kap: np.ndarray, mu: np.ndarray | None, max_weight: int):
    """Sum of log-hooks used by the Jack recursion, vectorized over rows.

    With ``mu`` None returns ``log j_kappa`` (upper times lower hooks over
    every cell).  Otherwise returns ``log beta_{kappa mu}``: per column the
    upper hook is used when the column lengths of kappa and mu agree and the
    lower hook otherwise, over the cells of kappa minus over the cells of mu.
    """
    n = kap.shape[1]
    total = np.zeros(kap.shape[0])
    for c in range(1, max_weight + 1):
        live = kap[:, 0] >= c
        if not live.any():
            break
        kc = np.sum(kap >= c, axis=1)
        if mu is not None:
            same = kc == np.sum(mu >= c, axis=1)
            mc = np.sum(mu >= c, axis=1)
        for r in range(n):
            in_k = kap[:, r] >= c
            if not in_k.any():
                break
            arm = kap[:, r] - c
            leg = kc - (r + 1)
            upper = leg + ALPHA * (arm + 1)
            lower = leg + 1 + ALPHA * arm
            if mu is None:
                total += np.where(in_k, np.log(np.where(in_k, upper * lower, 1.0)), 0.0)
                continue
            hook = np.where(same, upper, lower)
            total += np.where(in_k, np.log(np.where(in_k, hook, 1.0)), 0.0)
            in_m = mu[:, r] >= c
            arm_m = mu[:, r] - c
            leg_m = mc - (r + 1)
            hook_m = np.where(same, leg_m + ALPHA * (arm_m + 1), leg_m + 1 + ALPHA * arm_m)
            total -= np.where(in_m, np.log(np.where(in_m, hook_m, 1.0)), 0.0)
    return total


class ZonalTable:
    """Index of partitions and the sparse Jack-recursion coefficients.

    ``stored value`` for partition kappa is ``C_kappa(y) / |kappa|!``, which
    stays bounded for every weight when ``max(y) <= 1``.
    """

    def __init__(self, nvars: int, max_weight: int):
        self.nvars = nvars
        self.max_weight = max_weight
        self.parts = partitions(max_weight, nvars)
        self.index = {k: i for i, k in enumerate(self.parts)}
        self.weights = np.array([sum(k) for k in self.parts])
        self.starts = np.searchsorted(self.weights, np.arange(max_weight + 1))
        padded = np.zeros((len(self.parts), nvars), dtype=np.int64)
        for i, k in enumerate(self.parts):
            padded[i, : len(k)] = k
        self.padded = padded
        self.log_j = _hook_sums(padded, None, max_weight)
        single = [i for i, k in enumerate(self.parts) if len(k) <= 1]
        self.single_rows = np.array(single)
        self.single_weights = self.weights[self.single_rows]
        self.steps = [self._step_matrices(j) for j in range(2, nvars + 1)]

    def _step_matrices(self, j: int):
        """Coefficient matrices adding variable ``j`` (grouped by exponent)."""
        kap_rows, mu_rows = [], []
        for ki, kap in enumerate(self.parts):
            if len(kap) > j:
                continue
            full = list(kap) + [0] * (j - len(kap))
            ranges = [range(full[i + 1], full[i] + 1) for i in range(j - 1)]
            for mu in itertools.product(*ranges):
                mu = tuple(v for v in mu if v > 0)
                kap_rows.append(ki)
                mu_rows.append(self.index[mu])
        kap_rows = np.array(kap_rows)
        mu_rows = np.array(mu_rows)
        log_beta = _hook_sums(self.padded[kap_rows], self.padded[mu_rows], self.max_weight)
        expo = self.weights[kap_rows] - self.weights[mu_rows]
        coef = np.exp(
            log_beta
            + expo * math.log(ALPHA)
            + self.log_j[mu_rows]
            - self.log_j[kap_rows]
        )
        n = len(self.parts)
        mats = []
        for e in range(self.max_weight + 1):
            sel = expo == e
            if sel.any():
                mats.append((e, sp.csr_matrix((coef[sel], (kap_rows[sel], mu_rows[sel])), shape=(n, n))))
        return mats

    def values(self, y: np.ndarray) -> np.ndarray:
        """``C_kappa(y)/|kappa|!`` for each row of ``y`` -> (n_parts, B)."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        b, n = y.shape
        if n != self.nvars:
            raise ValueError(f"table built for {self.nvars} variables, got {n}")
        out = np.zeros((len(self.parts), b))
        k = self.single_weights
        out[self.single_rows] = y[:, 0][None, :] ** k[:, None] / np.exp(gammaln(k + 1))[:, None]
        for j, mats in enumerate(self.steps, start=1):
            nxt = np.zeros_like(out)
            for e, mat in mats:
                nxt += (mat @ out) * (y[:, j] ** e)[None, :]
            out = nxt
        return out

    def log_pochhammer(self, a: float) -> np.ndarray:
        """log (a)_kappa for every partition (alpha = 2)."""
        shift = np.arange(self.nvars) / ALPHA
        base = a - shift
        return np.sum(gammaln(base[None, :] + self.padded) - gammaln(base)[None, :], axis=1)


_TABLE_LOCK = threading.Lock()


@lru_cache(maxsize=16)
def _cached_table(nvars: int, max_weight: int) -> ZonalTable:
    return ZonalTable(nvars, max_weight)


def zonal_table(nvars: int, max_weight: int) -> ZonalTable:
    with _TABLE_LOCK:
        return _cached_table(nvars, max_weight)


# -- eigenvalues of the argument ---------------------------------------------

def argument_eigenvalues(arg: np.ndarray) -> np.ndarray:
    """Nonnegative real eigenvalues of a square argument, descending."""
    arg = np.asarray(arg, dtype=float)
    if arg.ndim != 2 or arg.shape[0] != arg.shape[1]:
        raise ValueError("argument must be a square matrix")
    if np.allclose(arg, arg.T, rtol=0, atol=1e-12 * max(1.0, np.abs(arg).max())):
        vals = np.linalg.eigvalsh(0.5 * (arg + arg.T))
    else:
        vals = np.linalg.eigvals(arg)
        scale = max(1.0, float(np.max(np.abs(vals))))
        if np.max(np.abs(vals.imag)) > 1e-8 * scale:
            raise DomainError("argument has complex eigenvalues")
        vals = vals.real
    scale = max(1.0, float(np.max(np.abs(vals))))
    if np.min(vals) < -1e-10 * scale:
        raise DomainError("argument has negative eigenvalues")
    return np.sort(np.clip(vals, 0.0, None))[::-1]


def product_eigenvalues(u_s: np.ndarray, u_t: np.ndarray) -> np.ndarray:
    """Eigenvalues of ``u_s @ u_t`` for SPD stacks, via ``R^T u_t R`` with ``u_s = R R^T``.

    Accepts (p, p) or (..., p, p) inputs; returns descending eigenvalues.
    """
    r = np.linalg.cholesky(u_s)
    sym = np.swapaxes(r, -1, -2) @ u_t @ r
    sym = 0.5 * (sym + np.swapaxes(sym, -1, -2))
    vals = np.linalg.eigvalsh(sym)
    return np.clip(vals, 0.0, None)[..., ::-1]


# -- batched evaluator ---------------------------------------------------------

def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def blend_window(max_weight: int) -> tuple[float, float]:
    """Trace range over which ``auto`` mode hands over from series to saddle point.

    The series with ``max_weight`` terms is converged to far below 1e-10 on
    the whole window; see tests/test_special.py for the check.
    """
    hi = max_weight * max_weight / 12.0
    return 0.5 * hi, hi


class Hyp0F1:
    """log 0F1(a; s_i * diag(x_i)) for a batch of fixed eigenvalue vectors.

    The eigenvalues ``x`` (B x p) stay fixed while ``a`` and the per-row
    scale ``s`` vary, which is the access pattern of the composite EM.
    Zonal values are computed lazily, only for rows that need the series,
    and cached; per-weight partial sums are cached per ``a``.
    """

    def __init__(self, eigenvalues: np.ndarray, cfg: HypergeomConfig | None = None):
        self.cfg = cfg or HypergeomConfig()
        x = np.atleast_2d(np.asarray(eigenvalues, dtype=float))
        if np.any(x < 0) or not np.all(np.isfinite(x)):
            raise DomainError("eigenvalues must be finite and nonnegative")
        self.nvars = x.shape[1]
        self.top = x.max(axis=1)
        safe = np.where(self.top > 0, self.top, 1.0)
        self.normalized = x / safe[:, None]
        self.trace_unit = self.normalized.sum(axis=1) * self.top
        self.eigenvalues = x
        self._table = None
        self._rows = np.full(x.shape[0], -1, dtype=np.int64)
        self._store = np.zeros((0, 0))
        self._used = 0
        self._sums: dict[tuple[float, int], np.ndarray] = {}

    def __len__(self):
        return self.eigenvalues.shape[0]

    @property
    def table(self) -> ZonalTable:
        if self._table is None:
            self._table = zonal_table(self.nvars, self.cfg.max_weight)
        return self._table

    def _ensure_zonal(self, rows: np.ndarray) -> None:
        missing = rows[self._rows[rows] < 0]
        if not missing.size:
            return
        missing = np.unique(missing)
        fresh = self.table.values(self.normalized[missing])
        need = self._used + missing.size
        if need > self._store.shape[1]:
            cap = min(len(self), max(need, 2 * self._store.shape[1]))
            grown = np.empty((fresh.shape[0], cap))
            if self._used:
                grown[:, :self._used] = self._store[:, :self._used]
            self._store = grown
        self._store[:, self._used:need] = fresh
        self._rows[missing] = self._used + np.arange(missing.size)
        self._used = need

    def _log_weight_sums(self, a: float) -> np.ndarray:
        """log sum_{|kappa| = k} C_kappa(y) / ((a)_kappa k!) for every stored row.

        Returns a (max_weight + 1, n_stored) array, cached per ``a``.
        """
        key = (float(a), self._used)
        hit = self._sums.get(key)
        if hit is not None:
            return hit
        table = self.table
        logw = -table.log_pochhammer(float(a))
        # per-weight shift keeps each weight's exponentials in range
        shifts = np.maximum.reduceat(logw, table.starts)
        n = len(logw)
        w = sp.csr_matrix(
            (np.exp(logw - shifts[table.weights]), (table.weights, np.arange(n))),
            shape=(table.max_weight + 1, n),
        )
        sums = w @ self._store[:, :self._used]
        with np.errstate(divide="ignore"):
            out = np.log(sums) + shifts[:, None]
        if len(self._sums) > 32:
            self._sums.clear()
        self._sums[key] = out
        return out

    def log_series(self, a: float, scale: np.ndarray, rows: np.ndarray | None = None,
                   check: bool = True) -> np.ndarray:
        """Truncated zonal series on ``rows`` (all rows by default)."""
        if rows is None:
            rows = np.arange(len(self))
        scale = np.broadcast_to(np.asarray(scale, dtype=float), (len(self),))[rows]
        out = np.zeros(rows.size)
        eff = scale * self.top[rows]
        live = eff > 0
        if not live.any():
            return out
        rows_l = rows[live]
        self._ensure_zonal(rows_l)
        log_terms = self._log_weight_sums(a)[:, self._rows[rows_l]]
        k = np.arange(self.table.max_weight + 1)[:, None]
        log_terms[1:] += k[1:] * np.log(eff[live])[None, :]
        total = logsumexp(log_terms, axis=0)
        if check:
            tail = log_terms[-1] - total
            bad = tail > math.log(self.cfg.relative_tol)
            if bad.any():
                worst = float(np.max(tail))
                raise TruncationNotConverged(
                    f"last weight contributes {math.exp(worst):.3g} of the sum at "
                    f"max_weight={self.table.max_weight}; argument too large"
                )
        out[live] = total
        return out

    def log_saddle(self, a: float, scale: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
        """Saddle-point (Laplace) approximation of the inverse-Laplace integral.

        ``0F1(a; X) = Gamma_p(a) 2^{p(p-1)/2} (2 pi i)^{-N} int etr(Z + X Z^{-1}) |Z|^{-a} dZ``
        with ``N = p(p+1)/2``, expanded around the diagonal saddle
        ``z_i = (a + sqrt(a^2 + 4 x_i)) / 2``.  Asymptotically exact as the
        argument grows.
        """
        if rows is None:
            rows = np.arange(len(self))
        scale = np.broadcast_to(np.asarray(scale, dtype=float), (len(self),))[rows]
        x = self.eigenvalues[rows] * scale[:, None]
        p = self.nvars
        n_free = p * (p + 1) / 2
        z = 0.5 * (a + np.sqrt(a * a + 4.0 * x))
        h = np.sum(z + x / z - a * np.log(z), axis=1)
        # curvature of the exponent along each free coordinate of Z
        curv = np.sum(np.log(x / z**3 + a / (2.0 * z * z)), axis=1)
        for i in range(p):
            for j in range(i + 1, p):
                zi, zj = z[:, i], z[:, j]
                curv += np.log(x[:, i] / (zi * zi * zj) + x[:, j] / (zj * zj * zi) + a / (zi * zj))
        const = log_multigamma(p, a) + p * (p - 1) / 2 * math.log(2.0) - n_free / 2 * math.log(4.0 * math.pi)
        return const + h - 0.5 * curv

    def log_value(self, a: float, scale: np.ndarray | float = 1.0) -> np.ndarray:
        """log 0F1 on every row.

        In ``auto`` mode rows beyond the series window use the saddle point
        shifted by its error at the window edge, where the series is still
        converged; the shift makes the result continuous along each row.
        """
        if a <= (self.nvars - 1) / 2:
            raise DomainError(f"0F1 needs a > (p-1)/2, got a={a}")
        scale = np.broadcast_to(np.asarray(scale, dtype=float), (len(self),))
        if self.cfg.method == "series":
            return self.log_series(a, scale)
        lo, hi = blend_window(self.cfg.max_weight)
        tau = scale * self.trace_unit
        weight = 1.0 - _smoothstep((tau - lo) / (hi - lo))
        out = np.zeros(len(self))
        use_series = weight > 0
        use_saddle = weight < 1
        if use_series.any():
            rows = np.flatnonzero(use_series)
            out[rows] = weight[rows] * self.log_series(a, scale, rows)
        if use_saddle.any():
            rows = np.flatnonzero(use_saddle)
            edge = np.zeros(len(self))
            edge[rows] = hi / self.trace_unit[rows]
            shift = self.log_series(a, edge, rows) - self.log_saddle(a, edge, rows)
            out[rows] += (1.0 - weight[rows]) * (self.log_saddle(a, scale, rows) + shift)
        return out


def log_hyp0f1_matrix(a: float, arg: np.ndarray, cfg: HypergeomConfig | None = None) -> float:
    """log 0F1(a; arg) for a square argument with nonnegative real eigenvalues."""
    cfg = cfg or HypergeomConfig()
    vals = argument_eigenvalues(arg)
    p = vals.size
    if a <= (p - 1) / 2:
        raise DomainError(f"0F1 needs a > (p-1)/2, got a={a}, p={p}")
    if not np.any(vals > 0):
        return 0.0
    return float(Hyp0F1(vals[None, :], cfg).log_value(a)[0])
