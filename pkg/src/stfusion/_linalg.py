"""Small batched linear-algebra helpers shared by the filter and fusion code.

Every function accepts stacks of matrices with arbitrary leading axes.
"""

from __future__ import annotations

import numpy as np

JITTER = 1e-12


class DefinitenessError(ValueError):
    """A matrix that must be symmetric positive definite is not."""


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def pd_mask(a: np.ndarray) -> np.ndarray:
    """Boolean mask over the leading axes: True where ``a`` factorizes."""
    a = symmetrize(a)
    try:
        # non-finite input may factor without error but leaves NaNs behind
        return np.all(np.isfinite(np.linalg.cholesky(a)), axis=(-2, -1))
    except np.linalg.LinAlgError:
        pass
    flat = a.reshape((-1,) + a.shape[-2:])
    ok = np.empty(flat.shape[0], dtype=bool)
    for i, m in enumerate(flat):
        try:
            ok[i] = np.all(np.isfinite(np.linalg.cholesky(m)))
        except np.linalg.LinAlgError:
            ok[i] = False
    return ok.reshape(a.shape[:-2])


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of the symmetrized matrix, raising on failure."""
    a = symmetrize(np.asarray(a, dtype=float))
    if not np.all(np.isfinite(a)):
        raise DefinitenessError("matrix has non-finite entries")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise DefinitenessError("matrix is not positive definite") from exc


def ensure_pd(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetrize, add ``JITTER * I`` once where factorization fails.

    Returns the repaired matrix and a mask of elements that are PD afterwards.
    """
    a = symmetrize(a)
    ok = pd_mask(a)
    if ok.all():
        return a, ok
    eye = np.eye(a.shape[-1])
    a = np.where(ok[..., None, None], a, a + JITTER * eye)
    return a, pd_mask(a)


def solve_pd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a x = b`` for SPD ``a`` through its Cholesky factor.

    ``b`` may be a vector stack (..., n) or a matrix stack (..., n, k).
    """
    low = cholesky(a)
    vec = b.ndim == a.ndim - 1
    rhs = b[..., None] if vec else b
    rhs = np.broadcast_to(rhs, np.broadcast_shapes(rhs.shape[:-2], low.shape[:-2]) + rhs.shape[-2:])
    low = np.broadcast_to(low, rhs.shape[:-2] + low.shape[-2:])
    y = np.linalg.solve(low, rhs)
    x = np.linalg.solve(np.swapaxes(low, -1, -2), y)
    return x[..., 0] if vec else x


def logdet_pd(a: np.ndarray) -> np.ndarray:
    low = cholesky(a)
    return 2.0 * np.sum(np.log(np.diagonal(low, axis1=-2, axis2=-1)), axis=-1)


def inv_pd(a: np.ndarray) -> np.ndarray:
    eye = np.broadcast_to(np.eye(a.shape[-1]), a.shape)
    return symmetrize(solve_pd(a, eye))


def quad_form(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``x^T a^{-1} x`` for SPD ``a``; ``x`` (..., n) broadcasts against
    the batch axes of ``a``."""
    low = cholesky(a)
    rhs = x[..., None]
    shape = np.broadcast_shapes(rhs.shape[:-2], low.shape[:-2])
    y = np.linalg.solve(np.broadcast_to(low, shape + low.shape[-2:]), np.broadcast_to(rhs, shape + rhs.shape[-2:]))
    return np.sum(y[..., 0] ** 2, axis=-1)


def outer(x: np.ndarray) -> np.ndarray:
    return x[..., :, None] * x[..., None, :]
