"""Limited-memory BFGS with a backtracking Armijo line search.

Written for small, noisy-ish objectives whose gradients come from central
differences: non-finite objective values are treated as +inf so the line
search simply backs off, and a failed line search ends the run with the
best point found instead of raising.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    nit: int
    nfev: int
    success: bool
    message: str


def central_gradient(fun: Callable, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        grad[i] = (fun(x + e) - fun(x - e)) / (2.0 * step)
    return grad


def minimize_lbfgs(fun: Callable, x0, grad: Callable | None = None, memory: int = 6,
                   max_iter: int = 50, gtol: float = 1e-7, ftol: float = 1e-12,
                   c1: float = 1e-4, max_backtracks: int = 40, fd_step: float = 1e-5) -> OptimizeResult:
    """Minimize ``fun`` from ``x0``.

    Parameters
    ----------
    grad
        Gradient callable; central differences with ``fd_step`` if omitted.
    gtol
        Stop when the max-norm of the gradient is below ``gtol * max(1, |f|)``.
    ftol
        Stop when an accepted step lowers ``f`` by less than ``ftol * max(1, |f|)``.
    """
    nfev = 0

    def f(x):
        nonlocal nfev
        nfev += 1
        val = float(fun(x))
        return val if np.isfinite(val) else np.inf

    if grad is None:
        def g(x):
            nonlocal nfev
            nfev += 2 * x.size
            return central_gradient(fun, x, fd_step)
    else:
        g = grad

    x = np.array(x0, dtype=float)
    fx = f(x)
    if not np.isfinite(fx):
        return OptimizeResult(x, fx, 0, nfev, False, "objective not finite at start")
    gx = np.asarray(g(x), dtype=float)
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []

    for it in range(1, max_iter + 1):
        if not np.all(np.isfinite(gx)):
            return OptimizeResult(x, fx, it - 1, nfev, False, "gradient not finite")
        if np.max(np.abs(gx)) < gtol * max(1.0, abs(fx)):
            return OptimizeResult(x, fx, it - 1, nfev, True, "gradient below tolerance")

        direction = -_two_loop(gx, s_hist, y_hist)
        slope = float(direction @ gx)
        if slope >= 0:
            # curvature pairs went stale; restart from steepest descent
            s_hist.clear()
            y_hist.clear()
            direction = -gx
            slope = float(direction @ gx)

        step = 1.0
        if not s_hist:
            step = min(1.0, 1.0 / max(np.max(np.abs(gx)), 1e-12))
        accepted = False
        for _ in range(max_backtracks):
            x_new = x + step * direction
            f_new = f(x_new)
            if f_new <= fx + c1 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if s_hist:
                s_hist.clear()
                y_hist.clear()
                continue
            return OptimizeResult(x, fx, it, nfev, False, "line search failure")

        g_new = np.asarray(g(x_new), dtype=float)
        s, y = x_new - x, g_new - gx
        if float(s @ y) > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
        decrease = fx - f_new
        x, fx, gx = x_new, f_new, g_new
        if decrease < ftol * max(1.0, abs(fx)):
            return OptimizeResult(x, fx, it, nfev, True, "objective change below tolerance")
    return OptimizeResult(x, fx, max_iter, nfev, True, "iteration limit")


def _two_loop(grad: np.ndarray, s_hist, y_hist) -> np.ndarray:
    q = grad.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / float(y @ s)
        a = rho * float(s @ q)
        alphas.append((a, rho, s, y))
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= float(s @ y) / float(y @ y)
    for a, rho, s, y in reversed(alphas):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q
