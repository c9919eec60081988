"""Limited-memory BFGS with a pluggable initial inverse Hessian.

When a Hessian-vector product is supplied the objective is taken to be
quadratic and every step uses the exact line minimizer; otherwise an Armijo
backtracking search is used.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class LbfgsResult:
    x: np.ndarray
    grad: np.ndarray
    n_iter: int
    converged: bool
    s_hist: list = field(default_factory=list)
    y_hist: list = field(default_factory=list)
    h0: Callable | None = None

    @property
    def grad_norm(self):
        return float(np.linalg.norm(self.grad))

    def inverse_hessian(self, v):
        """Apply the final inverse-Hessian approximation to ``v`` (a vector or columns)."""
        return two_loop(v, self.s_hist, self.y_hist, self.h0)


def _identity(v):
    return v


def two_loop(q, s_hist, y_hist, h0=None):
    """Standard two-loop recursion; ``q`` may carry extra trailing columns."""
    h0 = h0 or _identity
    q = np.array(q, dtype=np.float64, copy=True)
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / np.dot(y, s)
        a = rho * np.tensordot(s, q, axes=(0, 0))
        q -= np.multiply.outer(y, a) if q.ndim > 1 else a * y
        alphas.append((rho, a))
    r = h0(q)
    for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * np.tensordot(y, r, axes=(0, 0))
        r += np.multiply.outer(s, a - b) if r.ndim > 1 else (a - b) * s
    return r


def lbfgs(grad: Callable, x0, *, fun: Callable | None = None, hess_vec: Callable | None = None,
          h0: Callable | None = None, memory: int = 10, max_iter: int = 500,
          grad_tol: float = 1e-8) -> LbfgsResult:
    """Minimize a smooth function from its gradient.

    Exactly one of ``fun`` (for backtracking) or ``hess_vec`` (exact steps on
    a quadratic) should normally be given.
    """
    if memory < 1:
        raise ValueError("memory must be >= 1")
    if fun is None and hess_vec is None:
        raise ValueError("need fun or hess_vec")
    x = np.array(x0, dtype=np.float64, copy=True)
    g = grad(x)
    s_hist = deque(maxlen=memory)
    y_hist = deque(maxlen=memory)
    best_x, best_g = x.copy(), g.copy()
    n_iter = 0
    while np.linalg.norm(g) > grad_tol and n_iter < max_iter:
        d = -two_loop(g, s_hist, y_hist, h0)
        slope = np.dot(g, d)
        if slope >= 0:
            # lost descent: restart from the preconditioned gradient
            s_hist.clear()
            y_hist.clear()
            d = -(h0 or _identity)(g)
            slope = np.dot(g, d)
            if slope >= 0:
                break
        if hess_vec is not None:
            curv = np.dot(d, hess_vec(d))
            if curv <= 0:
                break
            step = -slope / curv
        else:
            step = _backtrack(fun, x, d, slope)
            if step == 0.0:
                break
        x_new = x + step * d
        g_new = grad(x_new)
        s, yv = x_new - x, g_new - g
        if np.dot(s, yv) > 1e-300:
            s_hist.append(s)
            y_hist.append(yv)
        x, g = x_new, g_new
        n_iter += 1
        if np.linalg.norm(g) < np.linalg.norm(best_g):
            best_x, best_g = x.copy(), g.copy()
    if np.linalg.norm(g) > np.linalg.norm(best_g):
        x, g = best_x, best_g
    converged = bool(np.linalg.norm(g) <= grad_tol)
    return LbfgsResult(x, g, n_iter, converged, list(s_hist), list(y_hist), h0)


def _backtrack(fun, x, d, slope, c1=1e-4, shrink=0.5, max_halvings=60):
    f0 = fun(x)
    step = 1.0
    for _ in range(max_halvings):
        if fun(x + step * d) <= f0 + c1 * step * slope:
            return step
        step *= shrink
    return 0.0
