"""Single-sensor recursions: the Student's t Kalman filter and the classic KF.

The process and measurement functions receive state arrays that may carry
leading batch axes and must broadcast over them; the Jacobian callables may
return either a single matrix or a matching batch of matrices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from ._linalg import DefinitenessError, cholesky, ensure_pd, solve_pd, symmetrize
from .densities import Gaussian, StudentT

TBelief = StudentT
GBelief = Gaussian
Belief = Union[StudentT, Gaussian]


@dataclass(frozen=True, eq=False)
class ProcessModel:
    f: Callable[[np.ndarray], np.ndarray]
    jacobian_f: Callable[[np.ndarray], np.ndarray]
    q_scale: np.ndarray
    q_dof: float = 3.0

    def __post_init__(self) -> None:
        q = np.array(self.q_scale, dtype=float)
        cholesky(q)
        if not self.q_dof > 2:
            raise ValueError("q_dof must be > 2")
        object.__setattr__(self, "q_scale", symmetrize(q))

    @property
    def dim(self) -> int:
        return self.q_scale.shape[-1]

    @classmethod
    def linear(cls, F, q_scale, q_dof: float = 3.0) -> "ProcessModel":
        F = np.array(F, dtype=float)
        return cls(lambda x: x @ F.T, lambda x: F, q_scale, q_dof)


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    h: Callable[[np.ndarray], np.ndarray]
    jacobian_h: Callable[[np.ndarray], np.ndarray]
    r_scale: np.ndarray
    r_dof: float = 3.0
    n: int | None = None

    def __post_init__(self) -> None:
        r = np.array(self.r_scale, dtype=float)
        cholesky(r)
        if not self.r_dof > 2:
            raise ValueError("r_dof must be > 2")
        object.__setattr__(self, "r_scale", symmetrize(r))

    @property
    def m(self) -> int:
        return self.r_scale.shape[-1]

    @classmethod
    def linear(cls, H, r_scale, r_dof: float = 3.0) -> "MeasurementModel":
        H = np.array(H, dtype=float)
        return cls(lambda x: x @ H.T, lambda x: H, r_scale, r_dof, n=H.shape[1])


def _predict_moments(mean, P, pm: ProcessModel):
    if mean.shape[-1] != pm.dim:
        raise ValueError(f"state dimension {mean.shape[-1]} != process model {pm.dim}")
    F = np.asarray(pm.jacobian_f(mean), dtype=float)
    mean_pred = np.asarray(pm.f(mean), dtype=float)
    P_pred = F @ P @ np.swapaxes(F, -1, -2) + pm.q_scale
    P_pred, ok = ensure_pd(P_pred)
    return mean_pred, P_pred, ok


def _innovation(mean, P, mm: MeasurementModel, z):
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != mm.m:
        raise ValueError(f"measurement has dimension {z.shape[-1]}, model expects {mm.m}")
    H = np.asarray(mm.jacobian_h(mean), dtype=float)
    dz = z - np.asarray(mm.h(mean), dtype=float)
    PHt = P @ np.swapaxes(H, -1, -2)
    S = symmetrize(H @ PHt + mm.r_scale)
    return dz, S, PHt


def _update_arrays(mean, P, mm: MeasurementModel, z, nu_prime):
    """Shared KF/StKF update core.

    Returns ``(mean, P_post, ok)`` where ``P_post`` is the unscaled
    ``P - K S K^T`` and, if ``nu_prime`` is given, also the scale factor.
    Elements whose innovation covariance fails to factorize are flagged in
    ``ok`` and left with their inputs.
    """
    dz, S, PHt = _innovation(mean, P, mm, z)
    S, ok = ensure_pd(S)
    if not ok.all():
        # keep failing elements well-posed; they are discarded by the caller
        eye = np.eye(S.shape[-1])
        S = np.where(ok[..., None, None], S, eye)
    K = np.swapaxes(solve_pd(S, np.swapaxes(PHt, -1, -2)), -1, -2)
    new_mean = mean + np.einsum("...ij,...j->...i", K, dz)
    P_post = P - K @ S @ np.swapaxes(K, -1, -2)
    alpha = None
    if nu_prime is not None:
        m = mm.m
        maha = np.einsum("...i,...i->...", dz, solve_pd(S, dz))
        alpha = (nu_prime + maha) / (nu_prime + m)
        P_post = alpha[..., None, None] * P_post
    P_post, ok_post = ensure_pd(P_post)
    ok = ok & ok_post & np.all(np.isfinite(new_mean), axis=-1)
    new_mean = np.where(ok[..., None], new_mean, mean)
    P_post = np.where(ok[..., None, None], P_post, P)
    return new_mean, P_post, alpha, ok


def _raise_if_failed(ok: np.ndarray, what: str) -> None:
    if not np.all(ok):
        raise DefinitenessError(f"{what}: matrix lost positive definiteness")


def stkf_predict(post: StudentT, pm: ProcessModel) -> StudentT:
    """One-step t prediction with the simple rule ``dof' = min(dof, q_dof)``."""
    mean, P, ok = _predict_moments(post.mean, post.scale, pm)
    _raise_if_failed(ok, "stkf_predict")
    return StudentT.unchecked(mean, P, np.minimum(post.dof, pm.q_dof))


def stkf_update_guarded(prior: StudentT, mm: MeasurementModel, z):
    """StKF update that never raises on numerical failure.

    Returns ``(posterior, ok)``; batch elements with ``ok == False`` keep
    the prior unchanged.
    """
    nu_prime = np.minimum(prior.dof, mm.r_dof)
    mean, P, _, ok = _update_arrays(prior.mean, prior.scale, mm, z, nu_prime)
    dof = np.where(ok, nu_prime + mm.m, prior.dof)
    return StudentT.unchecked(mean, P, dof), ok


def stkf_update(prior: StudentT, mm: MeasurementModel, z) -> StudentT:
    """t measurement update.

    The mean takes the ordinary Kalman-gain step; the scale is
    ``alpha * (P - K S K^T)`` with ``alpha = (dof' + dz^T S^-1 dz) / (dof' + m)``
    and the dof becomes ``dof' + m`` where ``dof' = min(prior dof, r_dof)``.
    """
    post, ok = stkf_update_guarded(prior, mm, z)
    _raise_if_failed(ok, "stkf_update")
    return post


def kf_predict(post: Gaussian, pm: ProcessModel) -> Gaussian:
    mean, P, ok = _predict_moments(post.mean, post.cov, pm)
    _raise_if_failed(ok, "kf_predict")
    return Gaussian.unchecked(mean, P)


def kf_update_guarded(prior: Gaussian, mm: MeasurementModel, z):
    mean, P, _, ok = _update_arrays(prior.mean, prior.cov, mm, z, None)
    return Gaussian.unchecked(mean, P), ok


def kf_update(prior: Gaussian, mm: MeasurementModel, z) -> Gaussian:
    post, ok = kf_update_guarded(prior, mm, z)
    _raise_if_failed(ok, "kf_update")
    return post


def predict(belief: Belief, pm: ProcessModel) -> Belief:
    if isinstance(belief, StudentT):
        return stkf_predict(belief, pm)
    return kf_predict(belief, pm)


def update_guarded(belief: Belief, mm: MeasurementModel, z):
    if isinstance(belief, StudentT):
        return stkf_update_guarded(belief, mm, z)
    return kf_update_guarded(belief, mm, z)
