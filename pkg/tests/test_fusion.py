import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stfusion import (
    AAVariant,
    DofRule,
    FusionKind,
    FusionMethod,
    Gaussian,
    MeasurementModel,
    StudentT,
    WeightedTMix,
    aa_moment_match,
    aa_weights,
    am_outlier_prob,
    am_stack,
    ci_fuse,
    ci_weights,
    fuse,
    kf_update,
    mix_moments,
    t_moments,
)
from stfusion.fusion import aa_objective, gaussian_aa_merge

from conftest import random_spd, random_t

GRID = np.round(np.arange(1, 1000) * 1e-3, 3)


def v1_oracle(w1, comps):
    """Weighted Gaussian-surrogate divergence of each component from the
    moment-matched mixture, summed with ordinary numpy per grid point."""
    covs = [t_moments(c)[1] for c in comps]
    w = np.array([w1, 1 - w1])
    mean = w[0] * comps[0].mean + w[1] * comps[1].mean
    mix = sum(wi * (C + np.outer(c.mean - mean, c.mean - mean)) for wi, C, c in zip(w, covs, comps))
    inv = np.linalg.inv(mix)
    n = len(mean)
    total = 0.0
    for wi, C, c in zip(w, covs, comps):
        d = c.mean - mean
        kl2 = np.trace(inv @ C) + d @ inv @ d - n + np.linalg.slogdet(mix)[1] - np.linalg.slogdet(C)[1]
        total += wi * kl2
    return total


def grid_argmax(f, grid=GRID):
    vals = np.array([f(g) for g in grid])
    return grid[np.argmax(vals)]


def ci_trace_oracle(w1, comps):
    infos = [np.linalg.inv(t_moments(c)[1]) for c in comps]
    return np.trace(np.linalg.inv(w1 * infos[0] + (1 - w1) * infos[1]))


class TestMomentMatch:
    @pytest.mark.analytic
    @pytest.mark.parametrize("rule", list(DofRule))
    def test_identical_components(self, rng, rule):
        d = random_t(rng, 3)
        out = aa_moment_match(WeightedTMix([d, d, d], [0.2, 0.3, 0.5]), rule)
        np.testing.assert_allclose(out.mean, d.mean, atol=1e-12)
        np.testing.assert_allclose(out.scale, d.scale, rtol=1e-12)
        assert float(out.dof) == pytest.approx(float(d.dof), abs=1e-12)

    @pytest.mark.analytic
    def test_symmetric_pair(self):
        a, b = StudentT([-1.0], [[1.0]], 3.0), StudentT([1.0], [[1.0]], 3.0)
        out = aa_moment_match(WeightedTMix([a, b], [0.5, 0.5]))
        assert abs(out.mean[0]) <= 1e-12
        assert out.scale[0, 0] == pytest.approx(4.0 / 3.0, abs=1e-12)
        assert float(out.dof) == 3.0

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), rule=st.sampled_from(list(DofRule)))
    def test_covariance_and_dof(self, seed, rule):
        r = np.random.default_rng(seed)
        comps = [random_t(r, 2) for _ in range(3)]
        w = r.dirichlet(np.ones(3)) * 0.97 + 0.01
        w /= w.sum()
        mix = WeightedTMix(comps, w)
        out = aa_moment_match(mix, rule)
        mean, cov = mix_moments(mix)
        np.testing.assert_allclose(t_moments(out)[1], cov, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(out.mean, sum(wi * c.mean for wi, c in zip(w, comps)), atol=1e-12)
        dofs = [float(c.dof) for c in comps]
        assert min(dofs) - 1e-12 <= float(out.dof) <= max(dofs) + 1e-12


class TestAAWeights:
    @pytest.mark.analytic
    def test_single_component(self, rng):
        np.testing.assert_array_equal(aa_weights([random_t(rng, 2)]), [1.0])

    @pytest.mark.analytic
    @pytest.mark.parametrize("variant", list(AAVariant))
    def test_mirror_images(self, rng, variant):
        P = random_spd(rng, 2)
        mu = rng.normal(size=2)
        w = aa_weights([StudentT(mu, P, 3.0), StudentT(-mu, P, 3.0)], variant)
        np.testing.assert_allclose(w, [0.5, 0.5], atol=1e-6)

    @pytest.mark.analytic
    def test_one_dim_against_grid(self):
        comps = [StudentT([0.0], [[1.0]], 3.0), StudentT([2.0], [[1.0]], 3.0)]
        w = aa_weights(comps)
        assert abs(w[0] - grid_argmax(lambda g: v1_oracle(g, comps))) <= 5e-3

    def test_unequal_scales_against_grid(self, rng):
        for _ in range(10):
            comps = [random_t(rng, 2), random_t(rng, 2)]
            w = aa_weights(comps)
            assert abs(w[0] - grid_argmax(lambda g: v1_oracle(g, comps))) <= 5e-3

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 3), k=st.integers(2, 4))
    def test_v1_objective_log_det_identity(self, seed, n, k):
        # the weighted divergences telescope to n + logdet(mix) - sum w logdet(C_i)
        r = np.random.default_rng(seed)
        comps = [random_t(r, n) for _ in range(k)]
        w = r.dirichlet(np.ones(k))
        covs = np.stack([t_moments(c)[1] for c in comps])
        _, mix = mix_moments(WeightedTMix.unchecked(comps, w))
        expected = n + np.linalg.slogdet(mix)[1] - sum(wi * np.linalg.slogdet(C)[1] for wi, C in zip(w, covs))
        assert float(aa_objective(w, comps)) == pytest.approx(expected, rel=1e-9, abs=1e-9)

    def test_three_components_beat_random_points(self, rng):
        comps = [random_t(rng, 2) for _ in range(3)]
        w = aa_weights(comps)
        best = float(aa_objective(w, comps))
        for v in rng.dirichlet(np.ones(3), 200):
            assert float(aa_objective(v, comps)) <= best + 1e-7

    def test_v2_against_grid(self, rng):
        comps = [random_t(rng, 2), random_t(rng, 2)]
        w = aa_weights(comps, AAVariant.V2)
        vals = [float(aa_objective([g, 1 - g], comps, AAVariant.V2)) for g in GRID]
        assert abs(w[0] - GRID[int(np.argmax(vals))]) <= 5e-3

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 4), variant=st.sampled_from(list(AAVariant)))
    def test_weights_on_simplex(self, seed, k, variant):
        r = np.random.default_rng(seed)
        w = aa_weights([random_t(r, 2) for _ in range(k)], variant)
        assert abs(w.sum() - 1.0) <= 1e-12
        assert np.all(w > 0)

    def test_batched_matches_loop(self, rng):
        pairs = [[random_t(rng, 2, 3.0), random_t(rng, 2, 3.0)] for _ in range(4)]
        stacked = [
            StudentT.unchecked(np.stack([p[i].mean for p in pairs]), np.stack([p[i].scale for p in pairs]), np.full(4, 3.0))
            for i in range(2)
        ]
        batched = aa_weights(stacked)
        for b, pair in enumerate(pairs):
            np.testing.assert_allclose(batched[b], aa_weights(pair), atol=1e-9)


class TestGaussianAA:
    @pytest.mark.analytic
    def test_identical(self, rng):
        g = Gaussian(rng.normal(size=2), random_spd(rng, 2))
        out = gaussian_aa_merge([g, g], [0.3, 0.7])
        np.testing.assert_allclose(out.mean, g.mean, atol=1e-12)
        np.testing.assert_allclose(out.cov, g.cov, atol=1e-12)

    @pytest.mark.analytic
    def test_symmetric_pair(self):
        out = gaussian_aa_merge([Gaussian([-1.0], [[1.0]]), Gaussian([1.0], [[1.0]])], [0.5, 0.5])
        assert abs(out.mean[0]) <= 1e-12
        assert out.cov[0, 0] == pytest.approx(2.0, abs=1e-12)


class TestCI:
    @pytest.mark.analytic
    def test_identical_components_uniform(self, rng):
        d = random_t(rng, 2)
        np.testing.assert_array_equal(ci_weights([d, d]), [0.5, 0.5])

    @pytest.mark.analytic
    def test_higher_precision_sensor_takes_all(self):
        w = ci_weights([StudentT([0.0], [[2.0]], 3.0), StudentT([1.0], [[1.0]], 3.0)])
        np.testing.assert_allclose(w, [0.0, 1.0], atol=1e-12)

    def test_against_grid(self, rng):
        grid = np.round(np.arange(0, 1001) * 1e-3, 3)
        for _ in range(10):
            comps = [random_t(rng, 2), random_t(rng, 2)]
            w = ci_weights(comps)
            assert abs(w[0] - grid_argmax(lambda g: -ci_trace_oracle(g, comps), grid)) <= 5e-3

    @pytest.mark.analytic
    def test_single_component_covariance(self, rng):
        d = random_t(rng, 3)
        out = ci_fuse([d], [1.0])
        np.testing.assert_allclose(t_moments(out)[1], t_moments(d)[1], rtol=1e-12)

    @pytest.mark.analytic
    def test_identical_components_any_weight(self, rng):
        d = random_t(rng, 2)
        out = ci_fuse([d, d], [0.3, 0.7])
        np.testing.assert_allclose(out.mean, d.mean, atol=1e-12)
        np.testing.assert_allclose(out.scale, d.scale, rtol=1e-12)

    @pytest.mark.analytic
    def test_vertex_weight_picks_component(self):
        out = ci_fuse([StudentT([0.0], [[2.0]], 3.0), StudentT([1.0], [[1.0]], 3.0)], [0.0, 1.0])
        assert t_moments(out)[1][0, 0] == pytest.approx(3.0, abs=1e-12)
        assert out.mean[0] == pytest.approx(1.0, abs=1e-12)

    def test_rejects_off_simplex(self, rng):
        d = random_t(rng, 2)
        with pytest.raises(ValueError):
            ci_fuse([d, d], [0.7, 0.7])

    def test_trace_not_above_best_input(self, rng):
        comps = [random_t(rng, 3) for _ in range(3)]
        out = ci_fuse(comps, ci_weights(comps))
        best = min(np.trace(t_moments(c)[1]) for c in comps)
        assert np.trace(t_moments(out)[1]) <= best + 1e-9


class TestFuse:
    def test_aa_mean_is_weighted_average(self, rng):
        comps = [random_t(rng, 2), random_t(rng, 2)]
        out, w = fuse(comps, FusionMethod(FusionKind.AA_SUBOPT_V1))
        np.testing.assert_allclose(out.mean, w[0] * comps[0].mean + w[1] * comps[1].mean, atol=1e-12)

    def test_uniform(self, rng):
        _, w = fuse([random_t(rng, 2) for _ in range(4)], FusionMethod(FusionKind.AA_UNIFORM))
        np.testing.assert_array_equal(w, np.full(4, 0.25))

    def test_gaussian_inputs(self, rng):
        comps = [Gaussian(rng.normal(size=2), random_spd(rng, 2)) for _ in range(2)]
        out, _ = fuse(comps, FusionMethod(FusionKind.CI))
        assert isinstance(out, Gaussian)

    def test_none_rejected(self, rng):
        with pytest.raises(ValueError):
            fuse([random_t(rng, 2)], FusionMethod(FusionKind.NONE))

    def test_mixed_types_rejected(self, rng):
        with pytest.raises(ValueError):
            fuse([random_t(rng, 2), Gaussian(np.zeros(2), np.eye(2))], FusionMethod())


class TestAugmentedMeasurement:
    @pytest.mark.analytic
    def test_stacked_structure(self, rng):
        H1, H2 = rng.normal(size=(2, 4)), rng.normal(size=(2, 4))
        R1, R2 = random_spd(rng, 2), random_spd(rng, 2)
        stacked = am_stack([MeasurementModel.linear(H1, R1, 3.0), MeasurementModel.linear(H2, R2, 5.0)])
        x = rng.normal(size=4)
        np.testing.assert_array_equal(stacked.jacobian_h(x), np.vstack([H1, H2]))
        np.testing.assert_allclose(stacked.r_scale, np.block([[R1, np.zeros((2, 2))], [np.zeros((2, 2)), R2]]), atol=1e-15)
        np.testing.assert_allclose(stacked.h(x), np.concatenate([H1 @ x, H2 @ x]))
        assert stacked.r_dof == 3.0

    @pytest.mark.analytic
    def test_single_model_unchanged(self):
        mm = MeasurementModel.linear(np.eye(2), np.eye(2))
        assert am_stack([mm]) is mm

    @pytest.mark.analytic
    def test_stacked_equals_sequential_kf(self, rng):
        prior = Gaussian(rng.normal(size=4), random_spd(rng, 4))
        models = [MeasurementModel.linear(rng.normal(size=(2, 4)), random_spd(rng, 2)) for _ in range(3)]
        zs = [rng.normal(size=2) for _ in models]
        joint = kf_update(prior, am_stack(models), np.concatenate(zs))
        seq = prior
        for mm, z in zip(models, zs):
            seq = kf_update(seq, mm, z)
        np.testing.assert_allclose(joint.mean, seq.mean, atol=1e-10)
        np.testing.assert_allclose(joint.cov, seq.cov, atol=1e-10)

    def test_state_dimension_mismatch(self):
        with pytest.raises(ValueError):
            am_stack([MeasurementModel.linear(np.eye(2), np.eye(2)), MeasurementModel.linear(np.ones((2, 3)), np.eye(2))])

    @pytest.mark.analytic
    def test_outlier_probability(self):
        assert am_outlier_prob([0.05, 0.05]) == pytest.approx(0.0975, abs=1e-15)
        assert am_outlier_prob([0.0]) == 0.0
        assert am_outlier_prob([1.0]) == 1.0
