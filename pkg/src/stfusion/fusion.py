"""Multi-sensor fusion of t and Gaussian beliefs.

Arithmetic-average (AA) fusion collapses the weighted mixture of the
posteriors to one density by matching its first two moments. Its weights
maximize the weighted divergence of each posterior from the fused density,
with the t divergences replaced by Gaussian ones in closed form. Covariance
intersection (CI) runs on the moment-matched Gaussians. The
augmented-measurement (AM) approach stacks the sensors into one model.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.linalg import block_diag

from ._linalg import cholesky, inv_pd, symmetrize
from .densities import Gaussian, StudentT, WeightedTMix, mix_moments, mixture_moments
from .filtering import MeasurementModel
from .optimize import simplex_max

Density = Union[StudentT, Gaussian]

AA_FLOOR = 1e-6
FLAT_RTOL = 1e-10


class FusionKind(enum.Enum):
    AA_SUBOPT_V1 = "aa_v1"
    AA_SUBOPT_V2 = "aa_v2"
    AA_UNIFORM = "aa_uniform"
    CI = "ci"
    AM = "am"
    NONE = "none"


class DofRule(enum.Enum):
    MIN = "min"
    AVERAGE = "average"


class AAVariant(enum.Enum):
    V1 = "v1"
    V2 = "v2"


@dataclass(frozen=True)
class FusionMethod:
    kind: FusionKind = FusionKind.AA_SUBOPT_V1
    dof_rule: DofRule = DofRule.AVERAGE

    @property
    def is_aa(self) -> bool:
        return self.kind in (FusionKind.AA_SUBOPT_V1, FusionKind.AA_SUBOPT_V2, FusionKind.AA_UNIFORM)


def _unpack(components: Sequence[Density]):
    """Stack components into ``(means, P, factor, dofs)``.

    ``P`` is the scale matrix for t components and the covariance for
    Gaussians; ``factor`` turns ``P`` into a covariance; ``dofs`` is None for
    Gaussians.
    """
    comps = list(components)
    if not comps:
        raise ValueError("need at least one component")
    is_t = isinstance(comps[0], StudentT)
    if any(isinstance(c, StudentT) != is_t for c in comps):
        raise ValueError("cannot mix t and Gaussian components")
    n = comps[0].dim
    if any(c.dim != n for c in comps):
        raise ValueError("components differ in dimension")
    means = np.stack(np.broadcast_arrays(*[c.mean for c in comps]), axis=-2)
    if is_t:
        P = np.stack(np.broadcast_arrays(*[c.scale for c in comps]), axis=-3)
        dofs = np.stack(np.broadcast_arrays(*[c.dof for c in comps]), axis=-1)
        dofs = np.broadcast_to(dofs, means.shape[:-1])
        factor = dofs / (dofs - 2.0)
    else:
        P = np.stack(np.broadcast_arrays(*[c.cov for c in comps]), axis=-3)
        dofs = None
        factor = np.ones(means.shape[:-1])
    return means, P, factor, dofs


def fused_dof(dofs: np.ndarray, rule: DofRule) -> np.ndarray:
    if rule is DofRule.MIN:
        return np.min(dofs, axis=-1)
    return np.mean(dofs, axis=-1)


def _logdet_from_chol(low: np.ndarray) -> np.ndarray:
    return 2.0 * np.sum(np.log(np.diagonal(low, axis1=-2, axis2=-1)), axis=-1)


def make_aa_objective(
    means: np.ndarray,
    P: np.ndarray,
    factor: np.ndarray,
    variant: AAVariant = AAVariant.V1,
    nu_aa: np.ndarray | None = None,
):
    """Build the weight objective for fixed components.

    The returned callable maps weights ``(..., I)`` to the weighted
    Gaussian-surrogate divergence of each component from the
    moment-matched fusion, evaluated term by term (trace, log-det and
    Mahalanobis parts). v1 uses moment-matched Gaussians on both sides. v2
    treats the component scale matrices as covariances and follows the
    printed expression, including its ``nu_aa`` factors. The fused moments
    are recomputed from the candidate weights on every call; weights are
    normalized first.
    """
    C = factor[..., None, None] * P
    if variant is AAVariant.V1:
        logdet_comp = _logdet_from_chol(cholesky(C))
        g = None
    else:
        logdet_comp = _logdet_from_chol(cholesky(P))
        g = np.ones(means.shape[:-2]) if nu_aa is None else nu_aa / (nu_aa - 2.0)
        g = np.broadcast_to(g, means.shape[:-2])[..., None]
        logdet_comp = logdet_comp - P.shape[-1] * np.log(g)
    Pt = np.swapaxes(P, -1, -2)

    def objective(w: np.ndarray) -> np.ndarray:
        w = w / np.sum(w, axis=-1, keepdims=True)
        mean, Pmix = mixture_moments(w, means, C)
        logdet_mix = _logdet_from_chol(cholesky(Pmix))[..., None]
        inv = np.linalg.inv(Pmix)[..., None, :, :]
        tr = factor * np.sum(inv * Pt, axis=(-2, -1))
        d = means - mean[..., None, :]
        maha = np.einsum("...in,...inm,...im->...i", d, inv, d)
        if g is not None:
            maha = maha / g
        return np.sum(w * (tr + logdet_mix - logdet_comp + maha), axis=-1)

    return objective


def aa_objective(
    w: np.ndarray,
    components: Sequence[Density],
    variant: AAVariant | str = AAVariant.V1,
    dof_rule: DofRule | str = DofRule.AVERAGE,
) -> np.ndarray:
    """Value of the AA weight objective at weights ``w``."""
    means, P, factor, dofs = _unpack(components)
    nu_aa = fused_dof(dofs, DofRule(dof_rule)) if dofs is not None else None
    return make_aa_objective(means, P, factor, AAVariant(variant), nu_aa)(np.asarray(w, dtype=float))


def _flat(objective, batch_shape, k: int, lo: float) -> np.ndarray:
    """Mask of batch elements whose objective is constant across the
    centroid and the near-vertices of the simplex."""
    centre = objective(np.full(batch_shape + (k,), 1.0 / k))
    flat = np.ones(batch_shape, dtype=bool)
    for j in range(k):
        v = np.full(batch_shape + (k,), lo)
        v[..., j] = 1.0 - (k - 1) * lo
        fv = objective(v)
        flat &= np.abs(fv - centre) <= FLAT_RTOL * np.maximum(1.0, np.abs(centre))
    return flat


def _optimize_weights(objective, batch_shape, k: int, lo: float) -> np.ndarray:
    if k == 1:
        return np.ones(batch_shape + (1,))
    w = simplex_max(objective, batch_shape, k, lo)
    flat = _flat(objective, batch_shape, k, lo)
    w = np.where(flat[..., None], 1.0 / k, w)
    return w / np.sum(w, axis=-1, keepdims=True)


def aa_weights(
    components: Sequence[Density],
    variant: AAVariant | str = AAVariant.V1,
    dof_rule: DofRule | str = DofRule.AVERAGE,
) -> np.ndarray:
    """Suboptimal AA fusing weights, shape ``(..., I)``.

    ``dof_rule`` only matters for v2, whose objective depends on the fused dof.
    """
    variant = AAVariant(variant)
    dof_rule = DofRule(dof_rule)
    means, P, factor, dofs = _unpack(components)
    nu_aa = fused_dof(dofs, dof_rule) if dofs is not None else None
    batch_shape, k = means.shape[:-2], means.shape[-2]

    objective = make_aa_objective(means, P, factor, variant, nu_aa)
    return _optimize_weights(objective, batch_shape, k, AA_FLOOR)


def aa_moment_match(m: WeightedTMix, dof_rule: DofRule | str = DofRule.AVERAGE) -> StudentT:
    """Single t with the mixture's mean and covariance."""
    dof_rule = DofRule(dof_rule)
    nu = fused_dof(_unpack(m.components)[3], dof_rule)
    mean, cov = mix_moments(m)
    return StudentT.unchecked(mean, ((nu - 2.0) / nu)[..., None, None] * cov, nu)


def uniform_weights(k: int, batch_shape: tuple[int, ...] = ()) -> np.ndarray:
    return np.full(batch_shape + (k,), 1.0 / k)


def aa_fuse(
    components: Sequence[StudentT],
    method: FusionMethod = FusionMethod(),
) -> StudentT:
    return fuse(components, method)[0]


def gaussian_aa_merge(components: Sequence[Gaussian], weights) -> Gaussian:
    """Moment-matched single Gaussian for a weighted Gaussian mixture."""
    means, P, _, _ = _unpack(components)
    mean, cov = mixture_moments(np.asarray(weights, dtype=float), means, P)
    return Gaussian.unchecked(mean, cov)


def _ci_information(components: Sequence[Density]):
    means, P, factor, dofs = _unpack(components)
    # moment-matched Gaussian precision: ((nu-2)/nu) P^-1 for t inputs
    info = inv_pd(P) / factor[..., None, None]
    return means, info, dofs


def ci_trace(w: np.ndarray, info: np.ndarray) -> np.ndarray:
    """Trace of the CI covariance for weights ``w`` (normalized first)."""
    w = w / np.sum(w, axis=-1, keepdims=True)
    total = np.einsum("...i,...inm->...nm", w, info)
    return np.trace(np.linalg.inv(total), axis1=-2, axis2=-1)


def ci_weights(components: Sequence[Density]) -> np.ndarray:
    """CI weights minimizing the trace of the fused covariance over the
    closed simplex."""
    means, info, _ = _ci_information(components)
    batch_shape, k = means.shape[:-2], means.shape[-2]
    return _optimize_weights(lambda w: -ci_trace(w, info), batch_shape, k, 0.0)


def ci_fuse(
    components: Sequence[Density],
    w,
    dof_rule: DofRule | str = DofRule.AVERAGE,
) -> Density:
    """CI fusion of the moment-matched Gaussians.

    t inputs give a t output with dof from ``dof_rule`` whose covariance
    equals the CI covariance.
    """
    dof_rule = DofRule(dof_rule)
    means, info, dofs = _ci_information(components)
    w = np.asarray(w, dtype=float)
    if np.any(w < 0) or np.any(np.abs(w.sum(axis=-1) - 1.0) > 1e-12):
        raise ValueError("CI weights must lie on the closed simplex")
    weighted = w[..., None, None] * info
    P_ci = inv_pd(np.sum(weighted, axis=-3))
    x_ci = np.einsum("...nm,...m->...n", P_ci, np.einsum("...inm,...im->...n", weighted, means))
    if dofs is None:
        return Gaussian.unchecked(x_ci, P_ci)
    nu = fused_dof(dofs, dof_rule)
    return StudentT.unchecked(x_ci, symmetrize(((nu - 2.0) / nu)[..., None, None] * P_ci), nu)


def fuse(
    components: Sequence[Density],
    method: FusionMethod,
    variant: AAVariant | None = None,
) -> tuple[Density, np.ndarray]:
    """Fuse a neighbourhood of beliefs; returns ``(density, weights)``."""
    comps = list(components)
    means = np.stack(np.broadcast_arrays(*[c.mean for c in comps]), axis=-2)
    batch_shape, k = means.shape[:-2], len(comps)
    kind = method.kind
    if kind is FusionKind.CI:
        w = ci_weights(comps)
        return ci_fuse(comps, w, method.dof_rule), w
    if kind is FusionKind.AA_UNIFORM:
        w = uniform_weights(k, batch_shape)
    elif kind in (FusionKind.AA_SUBOPT_V1, FusionKind.AA_SUBOPT_V2):
        if variant is None:
            variant = AAVariant.V1 if kind is FusionKind.AA_SUBOPT_V1 else AAVariant.V2
        w = aa_weights(comps, variant, method.dof_rule)
    else:
        raise ValueError(f"{kind} does not fuse beliefs")
    if isinstance(comps[0], StudentT):
        return aa_moment_match(WeightedTMix.unchecked(comps, w), method.dof_rule), w
    return gaussian_aa_merge(comps, w), w


def am_stack(models: Sequence[MeasurementModel]) -> MeasurementModel:
    """Augmented measurement model: stacked functions and Jacobians,
    block-diagonal noise scale, joint dof = min of the sensor dofs."""
    models = list(models)
    if not models:
        raise ValueError("need at least one measurement model")
    if len(models) == 1:
        return models[0]
    dims = {m.n for m in models if m.n is not None}
    if len(dims) > 1:
        raise ValueError(f"measurement models disagree on state dimension: {sorted(dims)}")

    def h(x):
        return np.concatenate([_bcast_last(np.asarray(m.h(x), dtype=float), x) for m in models], axis=-1)

    def jac(x):
        parts = [np.asarray(m.jacobian_h(x), dtype=float) for m in models]
        batch = np.broadcast_shapes(*[p.shape[:-2] for p in parts])
        return np.concatenate([np.broadcast_to(p, batch + p.shape[-2:]) for p in parts], axis=-2)

    R = block_diag(*[m.r_scale for m in models])
    return MeasurementModel(h, jac, R, min(m.r_dof for m in models), n=dims.pop() if dims else None)


def _bcast_last(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.broadcast_to(a, np.asarray(x).shape[:-1] + a.shape[-1:])


def am_outlier_prob(probs: Sequence[float]) -> float:
    """Outlier probability of the stacked measurement under independent
    per-sensor outliers: ``1 - prod(1 - p_i)``."""
    p = np.asarray(probs, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    return float(1.0 - np.prod(1.0 - p))
