"""Batched optimizers over the probability simplex.

Objectives take a weight array of shape ``(..., I)`` and return values of
shape ``(...)``; each batch element is optimized independently.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0

Objective = Callable[[np.ndarray], np.ndarray]


class OptimizationError(RuntimeError):
    """Raised when an optimizer fails; ``best`` holds the best iterate seen."""

    def __init__(self, message: str, best: np.ndarray) -> None:
        super().__init__(message)
        self.best = best


def _pair(w1: np.ndarray) -> np.ndarray:
    return np.stack([w1, 1.0 - w1], axis=-1)


def golden_section_max(
    objective: Objective,
    batch_shape: tuple[int, ...],
    lo: float = 0.0,
    hi: float = 1.0,
    tol: float = 1e-8,
    coarse: int = 9,
) -> np.ndarray:
    """Maximize a two-weight objective over ``w1`` in ``[lo, hi]``.

    A coarse grid first brackets the best cell so that a non-unimodal
    objective cannot trap the search; golden-section then refines it.
    The endpoints are kept as candidates so boundary optima are returned
    exactly. Returns ``w1`` with shape ``batch_shape``.
    """
    grid = np.linspace(lo, hi, coarse)
    vals = np.stack([objective(_pair(np.full(batch_shape, g))) for g in grid], axis=-1)
    best = np.argmax(vals, axis=-1)
    a = grid[np.clip(best - 1, 0, coarse - 1)]
    b = grid[np.clip(best + 1, 0, coarse - 1)]
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc = objective(_pair(c))
    fd = objective(_pair(d))
    for _ in range(200):
        if np.max(b - a) <= tol:
            break
        left = fc >= fd
        a, b = np.where(left, a, c), np.where(left, d, b)
        c, d = (
            np.where(left, b - INV_PHI * (b - a), d),
            np.where(left, c, a + INV_PHI * (b - a)),
        )
        fp = objective(_pair(np.where(left, c, d)))
        fc, fd = np.where(left, fp, fd), np.where(left, fc, fp)
    if not np.all(np.isfinite(fc)):
        raise OptimizationError("objective became non-finite", 0.5 * (a + b))

    mid = 0.5 * (a + b)
    cands = np.stack([mid, np.full(batch_shape, lo), np.full(batch_shape, hi)], axis=-1)
    cand_vals = np.stack([objective(_pair(cands[..., j])) for j in range(3)], axis=-1)
    pick = np.argmax(cand_vals, axis=-1)
    # an endpoint replaces the interior point only on strict improvement
    pick = np.where(cand_vals[..., 0] >= cand_vals.max(axis=-1), 0, pick)
    return np.take_along_axis(cands, pick[..., None], axis=-1)[..., 0]


def project_simplex(v: np.ndarray, lo: float = 0.0) -> np.ndarray:
    """Euclidean projection of ``v`` (..., I) onto ``{w >= lo, sum w = 1}``."""
    k = v.shape[-1]
    mass = 1.0 - k * lo
    if mass < 0:
        raise ValueError("lower bound too large for the simplex")
    y = v - lo
    u = -np.sort(-y, axis=-1)
    css = np.cumsum(u, axis=-1) - mass
    idx = np.arange(1, k + 1)
    cond = u - css / idx > 0
    rho = k - 1 - np.argmax(cond[..., ::-1], axis=-1)
    theta = np.take_along_axis(css, rho[..., None], axis=-1) / (rho[..., None] + 1.0)
    return np.maximum(y - theta, 0.0) + lo


def projected_gradient_max(
    objective: Objective,
    batch_shape: tuple[int, ...],
    k: int,
    lo: float = 0.0,
    iterations: int = 200,
    step: float = 1.0,
    h: float = 1e-6,
) -> np.ndarray:
    """Projected gradient ascent with central-difference gradients.

    Starts from uniform weights; a step that fails to improve the objective
    is rejected and the element's step size halved.
    """
    w = np.full(batch_shape + (k,), 1.0 / k)
    fw = objective(w)
    steps = np.full(batch_shape, float(step))
    eye = np.eye(k)
    for _ in range(iterations):
        cols = []
        for j in range(k):
            # the backward probe must not leave the nonnegative orthant
            back = np.maximum(w[..., j], h) - h
            minus = w.copy()
            minus[..., j] = back
            cols.append((objective(w + h * eye[j]) - objective(minus)) / (w[..., j] + h - back))
        grad = np.stack(cols, axis=-1)
        cand = project_simplex(w + steps[..., None] * grad, lo)
        fc = objective(cand)
        better = fc > fw
        w = np.where(better[..., None], cand, w)
        fw = np.where(better, fc, fw)
        steps = np.where(better, steps, 0.5 * steps)
    if not np.all(np.isfinite(fw)):
        raise OptimizationError("objective became non-finite", w)
    return w


def simplex_max(
    objective: Objective,
    batch_shape: tuple[int, ...],
    k: int,
    lo: float = 0.0,
) -> np.ndarray:
    """Maximize over the simplex; golden-section for two weights, projected
    gradient otherwise."""
    if k == 1:
        return np.ones(batch_shape + (1,))
    if k == 2:
        return _pair(golden_section_max(objective, batch_shape, lo, 1.0 - lo))
    return projected_gradient_max(objective, batch_shape, k, lo)
