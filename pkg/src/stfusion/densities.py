"""Student's t, Gaussian and t-mixture densities.

All parameter arrays may carry leading batch axes: a ``StudentT`` with
``mean.shape == (M, n)``, ``scale.shape == (M, n, n)`` and ``dof.shape == (M,)``
describes ``M`` independent densities, and every operation here broadcasts
over those axes. The Monte Carlo engine relies on this to push all
replications through one call. Sampling and the Monte Carlo divergence are
defined for unbatched densities only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from ._linalg import (
    DefinitenessError,
    cholesky,
    logdet_pd,
    outer,
    quad_form,
    solve_pd,
    symmetrize,
)

__all__ = [
    "DefinitenessError",
    "Gaussian",
    "StudentT",
    "WeightedTMix",
    "gaussian_kl",
    "mix_moments",
    "t_kl_mc",
    "t_logpdf",
    "t_moments",
    "t_sample",
]

SYMMETRY_RTOL = 1e-10
WEIGHT_ATOL = 1e-12


def _check_square_spd(name: str, mat: np.ndarray, n: int) -> None:
    if mat.shape[-2:] != (n, n):
        raise ValueError(f"{name} has shape {mat.shape[-2:]}, expected ({n}, {n})")
    scale = np.max(np.abs(mat)) if mat.size else 0.0
    asym = np.max(np.abs(mat - np.swapaxes(mat, -1, -2))) if mat.size else 0.0
    if asym > SYMMETRY_RTOL * scale:
        raise ValueError(f"{name} is not symmetric (max asymmetry {asym:.3g})")
    cholesky(mat)


def _freeze(*arrays: np.ndarray) -> None:
    for a in arrays:
        a.flags.writeable = False


@dataclass(frozen=True, eq=False)
class StudentT:
    """Multivariate Student's t with location ``mean``, scale matrix ``scale``
    (not the covariance) and degrees of freedom ``dof > 2``."""

    mean: np.ndarray
    scale: np.ndarray
    dof: np.ndarray

    def __post_init__(self) -> None:
        mean = np.array(self.mean, dtype=float)
        scale = np.array(self.scale, dtype=float)
        dof = np.array(self.dof, dtype=float)
        if mean.ndim == 0:
            mean = mean[None]
        if scale.ndim == 0:
            scale = scale[None, None]
        _check_square_spd("scale", scale, mean.shape[-1])
        if np.any(~np.isfinite(dof)) or np.any(dof <= 2.0):
            raise ValueError(f"dof must be finite and > 2, got {dof}")
        _freeze(mean, scale, dof)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "dof", dof)

    @classmethod
    def unchecked(cls, mean, scale, dof) -> "StudentT":
        """Build without validation; callers guarantee the invariants."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "mean", np.asarray(mean, dtype=float))
        object.__setattr__(obj, "scale", np.asarray(scale, dtype=float))
        object.__setattr__(obj, "dof", np.asarray(dof, dtype=float))
        return obj

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @property
    def cov(self) -> np.ndarray:
        return t_moments(self)[1]

    def __getitem__(self, idx) -> "StudentT":
        """Select batch elements."""
        return StudentT.unchecked(self.mean[idx], self.scale[idx], self.dof[idx])


@dataclass(frozen=True, eq=False)
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        mean = np.array(self.mean, dtype=float)
        cov = np.array(self.cov, dtype=float)
        if mean.ndim == 0:
            mean = mean[None]
        if cov.ndim == 0:
            cov = cov[None, None]
        _check_square_spd("cov", cov, mean.shape[-1])
        _freeze(mean, cov)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def unchecked(cls, mean, cov) -> "Gaussian":
        obj = object.__new__(cls)
        object.__setattr__(obj, "mean", np.asarray(mean, dtype=float))
        object.__setattr__(obj, "cov", np.asarray(cov, dtype=float))
        return obj

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    def __getitem__(self, idx) -> "Gaussian":
        return Gaussian.unchecked(self.mean[idx], self.cov[idx])


@dataclass(frozen=True, eq=False)
class WeightedTMix:
    """Weighted arithmetic average of t densities. ``weights`` has shape
    ``(..., I)`` and lies on the open simplex."""

    components: tuple[StudentT, ...]
    weights: np.ndarray

    def __post_init__(self) -> None:
        comps = tuple(self.components)
        if not comps:
            raise ValueError("mixture needs at least one component")
        n = comps[0].dim
        if any(c.dim != n for c in comps):
            raise ValueError("mixture components differ in dimension")
        w = np.array(self.weights, dtype=float)
        if w.shape[-1] != len(comps):
            raise ValueError(f"{w.shape[-1]} weights for {len(comps)} components")
        if np.any(w <= 0) or np.any(np.abs(w.sum(axis=-1) - 1.0) > WEIGHT_ATOL):
            raise ValueError("weights must be positive and sum to one")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", w)

    @classmethod
    def unchecked(cls, components: Sequence[StudentT], weights) -> "WeightedTMix":
        obj = object.__new__(cls)
        object.__setattr__(obj, "components", tuple(components))
        object.__setattr__(obj, "weights", np.asarray(weights, dtype=float))
        return obj

    @property
    def dim(self) -> int:
        return self.components[0].dim


def t_logpdf(d: StudentT, x) -> np.ndarray:
    """Log density of ``d`` at ``x``, evaluated in log space."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    n = d.dim
    if x.shape[-1] != n:
        raise ValueError(f"point has dimension {x.shape[-1]}, density has {n}")
    nu = d.dof
    diff = x - d.mean
    maha = quad_form(d.scale, diff)
    log_norm = (
        gammaln(0.5 * (nu + n))
        - gammaln(0.5 * nu)
        - 0.5 * logdet_pd(d.scale)
        - 0.5 * n * np.log(np.pi * nu)
    )
    return log_norm - 0.5 * (nu + n) * np.log1p(maha / nu)


def t_moments(d: StudentT) -> tuple[np.ndarray, np.ndarray]:
    factor = d.dof / (d.dof - 2.0)
    return d.mean, factor[..., None, None] * d.scale


def gaussian_logpdf(g: Gaussian, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    diff = x - g.mean
    n = g.dim
    return -0.5 * (n * np.log(2 * np.pi) + logdet_pd(g.cov) + quad_form(g.cov, diff))


def gaussian_kl(p: Gaussian, q: Gaussian) -> np.ndarray:
    """Closed-form ``KL(p || q)``."""
    if p.dim != q.dim:
        raise ValueError("Gaussians differ in dimension")
    n = p.dim
    tr = np.trace(solve_pd(q.cov, p.cov), axis1=-2, axis2=-1)
    maha = quad_form(q.cov, p.mean - q.mean)
    return 0.5 * (tr + maha - n + logdet_pd(q.cov) - logdet_pd(p.cov))


def t_sample(d: StudentT, count: int, seed) -> np.ndarray:
    """Draw ``count`` samples, shape ``(count, n)``.

    ``x = mean + L z sqrt(dof / u)`` with ``z`` standard normal and
    ``u ~ chi2(dof)`` drawn as ``Gamma(dof/2, 2)``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if d.mean.ndim != 1:
        raise ValueError("t_sample takes an unbatched density")
    rng = np.random.default_rng(seed)
    low = cholesky(d.scale)
    z = rng.standard_normal((count, d.dim))
    u = rng.gamma(0.5 * float(d.dof), 2.0, size=count)
    return d.mean + (z @ low.T) * np.sqrt(float(d.dof) / u)[:, None]


def t_kl_mc(p: StudentT, q: StudentT, samples: int, seed, return_stderr: bool = False):
    """Monte Carlo estimate of ``KL(p || q)`` from samples of ``p``.

    Draws are taken in antithetic pairs ``mean +/- e``; both members are
    exact draws from ``p`` so the estimate stays unbiased, and the pairing
    cancels the odd part of the log-ratio. ``samples`` counts pairs.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    x = t_sample(p, samples, seed)
    mirrored = 2.0 * p.mean - x
    lr = 0.5 * (
        (t_logpdf(p, x) - t_logpdf(q, x)) + (t_logpdf(p, mirrored) - t_logpdf(q, mirrored))
    )
    est = float(np.mean(lr))
    if return_stderr:
        return est, float(np.std(lr, ddof=1) / np.sqrt(samples)) if samples > 1 else np.inf
    return est


def _stack(components: Sequence[StudentT]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    means = np.stack(np.broadcast_arrays(*[c.mean for c in components]), axis=-2)
    scales = np.stack(np.broadcast_arrays(*[c.scale for c in components]), axis=-3)
    dofs = np.stack(np.broadcast_arrays(*[c.dof for c in components]), axis=-1)
    return means, scales, dofs


def mixture_moments(weights: np.ndarray, means: np.ndarray, covs: np.ndarray):
    """Mean and covariance of a mixture with component means ``(..., I, n)``
    and component covariances ``(..., I, n, n)``."""
    mean = np.einsum("...i,...in->...n", weights, means)
    spread = means - mean[..., None, :]
    second = covs + outer(spread)
    cov = np.einsum("...i,...inm->...nm", weights, second)
    return mean, symmetrize(cov)


def mix_moments(m: WeightedTMix) -> tuple[np.ndarray, np.ndarray]:
    means, scales, dofs = _stack(m.components)
    covs = (dofs / (dofs - 2.0))[..., None, None] * scales
    return mixture_moments(m.weights, means, covs)
