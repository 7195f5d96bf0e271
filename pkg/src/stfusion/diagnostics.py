"""Divergence curves for judging the Gaussian surrogates of t divergences.

For a pair of t densities separated by a mean offset this computes the
Monte Carlo KL divergence next to the two closed-form surrogates, and the
"middle distribution" residual ``|KL(S1 || S_AA) - KL(S2 || S_AA)|`` of the
fusion produced by the optimized weights.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

from .densities import Gaussian, StudentT, WeightedTMix, gaussian_kl, t_kl_mc, t_moments
from .fusion import AAVariant, DofRule, aa_moment_match, aa_weights


@dataclass(frozen=True)
class DivergenceRow:
    offset: float
    scale_ratio: float
    mc_kl: float
    approx_v1: float
    approx_v2: float
    w1: float
    kl_1_fused: float
    kl_2_fused: float
    residual: float
    relative_residual: float

    def as_dict(self) -> dict:
        return asdict(self)


def surrogate_kl(p: StudentT, q: StudentT, variant: AAVariant | str = AAVariant.V1) -> float:
    """Gaussian stand-in for ``KL(p || q)``.

    v1 matches means and covariances; v2 uses the scale matrices as
    covariances and ignores the dof.
    """
    if AAVariant(variant) is AAVariant.V1:
        gp, gq = Gaussian(*t_moments(p)), Gaussian(*t_moments(q))
    else:
        gp, gq = Gaussian(p.mean, p.scale), Gaussian(q.mean, q.scale)
    return float(gaussian_kl(gp, gq))


def middle_residual(
    s1: StudentT,
    s2: StudentT,
    samples: int = 100_000,
    seed: int = 0,
    variant: AAVariant | str = AAVariant.V1,
    dof_rule: DofRule | str = DofRule.AVERAGE,
) -> tuple[float, float, float]:
    """Optimized first weight and the MC divergences of both components
    from the fused density."""
    w = aa_weights([s1, s2], variant, dof_rule)
    fused = aa_moment_match(WeightedTMix([s1, s2], w), dof_rule)
    kl1 = t_kl_mc(s1, fused, samples, seed)
    kl2 = t_kl_mc(s2, fused, samples, seed + 1)
    return float(w[0]), kl1, kl2


def divergence_table(
    offsets: Iterable[float] = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0),
    scale_ratios: Iterable[float] = (1.0, 2.0, 4.0),
    dof: float = 3.0,
    dim: int = 2,
    samples: int = 100_000,
    seed: int = 0,
) -> list[DivergenceRow]:
    """Rows over (scale ratio, offset) for pairs ``S(0, I, dof)`` and
    ``S(offset * e1, ratio * I, dof)``."""
    rows = []
    e1 = np.eye(dim)[0]
    for ratio in scale_ratios:
        for offset in offsets:
            s1 = StudentT(np.zeros(dim), np.eye(dim), dof)
            s2 = StudentT(offset * e1, ratio * np.eye(dim), dof)
            mc = t_kl_mc(s1, s2, samples, seed)
            w1, kl1, kl2 = middle_residual(s1, s2, samples, seed + 1)
            resid = abs(kl1 - kl2)
            top = max(kl1, kl2)
            rows.append(
                DivergenceRow(
                    offset=float(offset),
                    scale_ratio=float(ratio),
                    mc_kl=mc,
                    approx_v1=surrogate_kl(s1, s2, AAVariant.V1),
                    approx_v2=surrogate_kl(s1, s2, AAVariant.V2),
                    w1=w1,
                    kl_1_fused=kl1,
                    kl_2_fused=kl2,
                    residual=resid,
                    relative_residual=resid / top if top > 0 else 0.0,
                )
            )
    return rows
