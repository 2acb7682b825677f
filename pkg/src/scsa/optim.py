"""Limited-memory BFGS minimizer, plus a variant that handles group-lasso
nonsmoothness by truncation and minimum-norm subgradients.

The truncation variant zeroes penalized groups whose norm falls below a
threshold before each gradient evaluation. For a zeroed group the minimum-norm
element of the subdifferential is used: zero if the smooth gradient of the
group has norm <= its weight, otherwise the smooth gradient shrunk radially by
the weight. A freshly zeroed group is pinned at zero for a few iterations to
stop it oscillating in and out of the active set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import NumericError, StagnationError

MAX_BACKTRACKS = 60

# Exceptions treated as "+inf objective" during line search, so the search
# backs off instead of crashing (e.g. an iterate crossing det B = 0).
_BARRIER_ERRORS = (NumericError, FloatingPointError, np.linalg.LinAlgError)


@dataclass
class OptimizerConfig:
    memory: int = 10
    max_iters: int = 500
    grad_tol: float = 1e-6
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    truncation_threshold: float = 1e-8
    zero_dwell: int = 3
    value_tol: float = 1e-10
    value_tol_iters: int = 5

    def __post_init__(self):
        if self.memory < 1:
            raise ValueError("memory must be >= 1")
        if self.grad_tol <= 0 or self.value_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class OptimizationTrace:
    iterations: int = 0
    final_value: float = np.nan
    final_grad_norm: float = np.nan
    converged: bool = False
    value_history: List[float] = field(default_factory=list)


@dataclass
class Group:
    """Index set of one penalized coefficient group and its weight."""

    indices: np.ndarray
    weight: float


class _LbfgsMemory:
    def __init__(self, m):
        self.m = m
        self.s: List[np.ndarray] = []
        self.y: List[np.ndarray] = []
        self.rho: List[float] = []

    def clear(self):
        self.s, self.y, self.rho = [], [], []

    def push(self, s, y):
        sy = float(np.dot(s, y))
        if sy <= 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            return  # skip pairs that would break positive definiteness
        self.s.append(s)
        self.y.append(y)
        self.rho.append(1.0 / sy)
        if len(self.s) > self.m:
            self.s.pop(0)
            self.y.pop(0)
            self.rho.pop(0)

    def direction(self, g):
        """Two-loop recursion; returns a descent direction for gradient g."""
        q = -g.copy()
        if not self.s:
            return q
        alphas = []
        for s, y, rho in zip(reversed(self.s), reversed(self.y), reversed(self.rho)):
            a = rho * np.dot(s, q)
            alphas.append(a)
            q -= a * y
        gamma = np.dot(self.s[-1], self.y[-1]) / np.dot(self.y[-1], self.y[-1])
        q *= gamma
        for (s, y, rho), a in zip(
            zip(self.s, self.y, self.rho), reversed(alphas)
        ):
            b = rho * np.dot(y, q)
            q += (a - b) * s
        return q


def _safe_value(f):
    return f if np.isfinite(f) else np.inf


def _line_search(value_fn, x, f, g, d, cfg):
    """Backtracking Armijo search. Returns (step, x_new, f_new) or None."""
    slope = float(np.dot(g, d))
    if slope >= 0:
        d = -g
        slope = -float(np.dot(g, g))
        if slope == 0.0:
            return None
    step = 1.0
    for _ in range(MAX_BACKTRACKS):
        x_new = x + step * d
        f_new = _safe_value(value_fn(x_new))
        if f_new <= f + cfg.armijo_c * step * slope:
            return step, x_new, f_new
        step *= cfg.backtrack
    return None


def minimize(
    objective: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    x0: np.ndarray,
    cfg: Optional[OptimizerConfig] = None,
    value_fn: Optional[Callable[[np.ndarray], float]] = None,
) -> Tuple[np.ndarray, OptimizationTrace]:
    """Minimize a smooth objective given its value-and-gradient callable.

    Stops when the gradient sup-norm drops below ``grad_tol * max(1, |f|)``
    or the relative value change stays below ``value_tol`` for
    ``value_tol_iters`` consecutive iterations.

    ``value_fn``, when given, is a cheaper value-only callable used during
    backtracking.

    Raises
    ------
    StagnationError
        If no backtracking step achieves sufficient decrease; the error
        carries the last iterate and trace.
    """
    cfg = cfg or OptimizerConfig()
    x = np.asarray(x0, dtype=float).copy()
    f, g = objective(x)
    if not np.isfinite(f):
        raise ValueError("objective not finite at the starting point")
    memory = _LbfgsMemory(cfg.memory)
    trace = OptimizationTrace(value_history=[f])
    cheap = value_fn if value_fn is not None else (lambda xx: objective(xx)[0])

    def value_only(xx):
        try:
            return cheap(xx)
        except _BARRIER_ERRORS:
            return np.inf

    flat_count = 0
    for it in range(cfg.max_iters):
        gnorm = float(np.max(np.abs(g)))
        trace.iterations = it
        trace.final_value = f
        trace.final_grad_norm = gnorm
        if gnorm <= cfg.grad_tol * max(1.0, abs(f)):
            trace.converged = True
            return x, trace
        d = memory.direction(g)
        result = _line_search(value_only, x, f, g, d, cfg)
        if result is None:
            raise StagnationError(
                "line search found no acceptable step", x=x, trace=trace
            )
        _, x_new, f_new = result
        _, g_new = objective(x_new)
        memory.push(x_new - x, g_new - g)
        if abs(f - f_new) <= cfg.value_tol * max(1.0, abs(f)):
            flat_count += 1
        else:
            flat_count = 0
        x, f, g = x_new, f_new, g_new
        trace.value_history.append(f)
        if flat_count >= cfg.value_tol_iters:
            trace.iterations = it + 1
            trace.final_value = f
            trace.final_grad_norm = float(np.max(np.abs(g)))
            trace.converged = True
            return x, trace
    trace.iterations = cfg.max_iters
    trace.final_value = f
    trace.final_grad_norm = float(np.max(np.abs(g)))
    trace.converged = False
    return x, trace


def min_norm_subgradient(smooth_group_grad: np.ndarray, weight: float) -> np.ndarray:
    """Minimum-norm element of the subdifferential at a zeroed group."""
    norm = float(np.linalg.norm(smooth_group_grad))
    if norm <= weight:
        return np.zeros_like(smooth_group_grad)
    return smooth_group_grad * (1.0 - weight / norm)


def minimize_with_group_truncation(
    smooth_objective: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    x0: np.ndarray,
    groups: Sequence[Group],
    cfg: Optional[OptimizerConfig] = None,
) -> Tuple[np.ndarray, OptimizationTrace]:
    """Minimize smooth(x) + sum_g weight_g * ||x_g||_2 by modified L-BFGS.

    ``smooth_objective`` returns the value and gradient of the smooth part
    only; the penalty and its (sub)gradient are handled here. Groups with
    weight 0 are ignored. The L-BFGS history is reset whenever the set of
    zeroed groups changes, since the effective objective changes with it.
    """
    cfg = cfg or OptimizerConfig()
    groups = [g for g in groups if g.weight > 0]
    x = np.asarray(x0, dtype=float).copy()

    def penalty(xx):
        return sum(g.weight * np.linalg.norm(xx[g.indices]) for g in groups)

    def total_value(xx):
        try:
            return _safe_value(smooth_objective(xx)[0] + penalty(xx))
        except _BARRIER_ERRORS:
            return np.inf

    dwell = np.zeros(len(groups), dtype=int)  # iterations left pinned at zero

    def truncate(xx):
        """Zero small groups in place; returns the zero-set signature."""
        zero = np.zeros(len(groups), dtype=bool)
        for i, g in enumerate(groups):
            if np.linalg.norm(xx[g.indices]) < cfg.truncation_threshold:
                xx[g.indices] = 0.0
                zero[i] = True
        return zero

    def subgradient(xx, g_smooth, zero, pinned):
        g = g_smooth.copy()
        for i, grp in enumerate(groups):
            idx = grp.indices
            if zero[i]:
                if pinned[i]:
                    g[idx] = 0.0
                else:
                    g[idx] = min_norm_subgradient(g_smooth[idx], grp.weight)
            else:
                g[idx] += grp.weight * xx[idx] / np.linalg.norm(xx[idx])
        return g

    zero_set = truncate(x)
    f_smooth, g_smooth = smooth_objective(x)
    f = f_smooth + penalty(x)
    if not np.isfinite(f):
        raise ValueError("objective not finite at the starting point")
    pinned = np.zeros(len(groups), dtype=bool)
    g = subgradient(x, g_smooth, zero_set, pinned)

    memory = _LbfgsMemory(cfg.memory)
    trace = OptimizationTrace(value_history=[f])
    flat_count = 0
    for it in range(cfg.max_iters):
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        trace.iterations = it
        trace.final_value = f
        trace.final_grad_norm = gnorm
        if gnorm <= cfg.grad_tol * max(1.0, abs(f)):
            trace.converged = True
            return x, trace
        d = memory.direction(g)
        result = _line_search(total_value, x, f, g, d, cfg)
        if result is None:
            raise StagnationError(
                "line search found no acceptable step", x=x, trace=trace
            )
        _, x_new, _ = result
        new_zero = truncate(x_new)
        newly_zeroed = new_zero & ~zero_set
        dwell[newly_zeroed] = cfg.zero_dwell
        pinned = dwell > 0
        dwell = np.maximum(dwell - 1, 0)
        f_smooth_new, g_smooth_new = smooth_objective(x_new)
        f_new = f_smooth_new + penalty(x_new)
        g_new = subgradient(x_new, g_smooth_new, new_zero, pinned)
        if np.array_equal(new_zero, zero_set):
            memory.push(x_new - x, g_new - g)
        else:
            memory.clear()
        zero_set = new_zero
        if abs(f - f_new) <= cfg.value_tol * max(1.0, abs(f)):
            flat_count += 1
        else:
            flat_count = 0
        x, f, g = x_new, f_new, g_new
        trace.value_history.append(f)
        if flat_count >= cfg.value_tol_iters:
            trace.iterations = it + 1
            trace.final_value = f
            trace.final_grad_norm = float(np.max(np.abs(g)))
            trace.converged = True
            return x, trace
    trace.iterations = cfg.max_iters
    trace.final_value = f
    trace.final_grad_norm = float(np.max(np.abs(g)))
    trace.converged = False
    return x, trace
