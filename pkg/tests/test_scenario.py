import numpy as np
import pytest

from stfusion import (
    FilterKind,
    OutlierNoiseSpec,
    ScenarioConfig,
    generate_measurements,
    generate_truth,
    method_from_name,
    rmse,
    run_experiment,
    run_sweep,
)
from stfusion.scenario import METHOD_NAMES, filter_models, sample_outlier_sigma, simulate_runs


class TestOutlierSwitch:
    @pytest.mark.analytic
    def test_never_and_always(self, rng):
        assert np.all(sample_outlier_sigma(OutlierNoiseSpec(1.0, 9.0, 0.0), rng, 1000) == 1.0)
        assert np.all(sample_outlier_sigma(OutlierNoiseSpec(1.0, 9.0, 1.0), rng, 1000) == 9.0)

    @pytest.mark.analytic
    def test_frequency(self, rng):
        draws = sample_outlier_sigma(OutlierNoiseSpec(1.0, 9.0, 0.05), rng, 100_000)
        assert 0.045 <= np.mean(draws == 9.0) <= 0.055

    def test_validation(self):
        with pytest.raises(ValueError):
            OutlierNoiseSpec(2.0, 1.0)
        with pytest.raises(ValueError):
            OutlierNoiseSpec(1.0, 2.0, 1.5)


class TestTruth:
    @pytest.mark.analytic
    def test_noiseless_straight_line(self):
        cfg = ScenarioConfig(steps=20)
        x = generate_truth(cfg, 0, noiseless=True)
        np.testing.assert_allclose(np.diff(x[:, 0]), 20.0)
        np.testing.assert_allclose(np.diff(x[:, 2]), 0.0)
        np.testing.assert_allclose(x[:, [1, 3]], np.tile([20.0, 0.0], (21, 1)))

    @pytest.mark.analytic
    def test_deterministic_per_run(self):
        cfg = ScenarioConfig(steps=10)
        np.testing.assert_array_equal(generate_truth(cfg, 3), generate_truth(cfg, 3))
        assert not np.array_equal(generate_truth(cfg, 3), generate_truth(cfg, 4))

    def test_acceleration_noise_level(self):
        cfg = ScenarioConfig(steps=100)
        dv = np.concatenate([np.diff(generate_truth(cfg, r)[:, [1, 3]], axis=0) for r in range(200)])
        assert np.std(dv[:, 0]) == pytest.approx(5.0, rel=0.02)
        assert np.std(dv[:, 1]) == pytest.approx(5.0, rel=0.02)

    def test_initial_state_distribution(self):
        cfg = ScenarioConfig(steps=1)
        x0 = np.stack([generate_truth(cfg, r)[0] for r in range(4000)])
        np.testing.assert_allclose(x0.var(axis=0), [500, 50, 500, 50], rtol=0.08)


class TestMeasurements:
    @pytest.mark.analytic
    def test_noiseless_equals_positions(self, rng):
        cfg = ScenarioConfig(steps=15)
        truth = generate_truth(cfg, 0)
        meas = generate_measurements(truth, cfg.sensors, rng, noiseless=True)
        for z in meas.z:
            np.testing.assert_array_equal(z, truth[1:][:, [0, 2]])

    def test_nominal_noise_level(self):
        cfg = ScenarioConfig(steps=100)
        errs = []
        for r in range(100):
            truth = generate_truth(cfg, r)
            meas = generate_measurements(truth, cfg.sensors, np.random.default_rng(r))
            errs.append(meas.z[1] - truth[1:][:, [0, 2]])
        assert np.std(np.concatenate(errs)) == pytest.approx(10.0, rel=0.03)

    def test_outlier_indicators_independent(self):
        cfg = ScenarioConfig(steps=100).with_outlier_prob(0.2)
        flags = [[], []]
        for r in range(300):
            meas = generate_measurements(generate_truth(cfg, r), cfg.sensors, np.random.default_rng(10_000 + r))
            for s in range(2):
                flags[s].append(meas.outliers[s])
        a, b = (np.concatenate(f).astype(float) for f in flags)
        # 3e4 samples: correlation standard error is about 0.006
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.03

    def test_dimension_mismatch(self, rng):
        cfg = ScenarioConfig(steps=3)
        with pytest.raises(ValueError):
            generate_measurements(np.zeros((4, 3)), cfg.sensors, rng)


class TestRMSE:
    @pytest.mark.analytic
    def test_exact_estimates(self, rng):
        x = rng.normal(size=(3, 5, 4))
        np.testing.assert_array_equal(rmse(x, x), np.zeros(5))

    @pytest.mark.analytic
    def test_hand_case(self):
        est = np.zeros((2, 1, 4))
        tru = np.zeros((2, 1, 4))
        tru[0, 0, 0] = 3.0
        tru[1, 0, 2] = 4.0
        assert rmse(est, tru)[0] == pytest.approx(3.5355339059327378, abs=1e-12)

    def test_permutation_invariant(self, rng):
        est, tru = rng.normal(size=(6, 4, 4)), rng.normal(size=(6, 4, 4))
        perm = rng.permutation(6)
        np.testing.assert_allclose(rmse(est, tru, "velocity"), rmse(est[perm], tru[perm], "velocity"), rtol=1e-14)

    def test_nonnegative_and_zero_only_when_exact(self, rng):
        est, tru = rng.normal(size=(4, 3, 4)), rng.normal(size=(4, 3, 4))
        assert np.all(rmse(est, tru) > 0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            rmse(np.zeros((0, 3, 4)), np.zeros((0, 3, 4)))


class TestExperiment:
    @pytest.mark.analytic
    def test_smoke_single_step(self):
        cfg = ScenarioConfig(runs=1, steps=1)
        report = run_experiment(cfg, [method_from_name(n) for n in METHOD_NAMES])
        for name in METHOD_NAMES:
            # prior std is about 22 m per position axis; measurements pull towards truth
            assert report.position_rmse[name][0] < 100.0

    @pytest.mark.analytic
    def test_duplicate_methods_identical(self):
        cfg = ScenarioConfig(runs=4, steps=10).with_outlier_prob(0.1)
        report = run_experiment(cfg, [method_from_name("stkf-aa"), method_from_name("kf-ci")])
        again = run_experiment(cfg, [method_from_name("kf-ci"), method_from_name("stkf-aa")])
        np.testing.assert_array_equal(report.position_rmse["stkf-aa"], again.position_rmse["stkf-aa"])
        np.testing.assert_array_equal(report.position_rmse["kf-ci"], again.position_rmse["kf-ci"])

    def test_paired_inputs(self):
        cfg = ScenarioConfig(runs=3, steps=5)
        t1, z1 = simulate_runs(cfg, range(3))
        t2, z2 = simulate_runs(cfg, range(3))
        np.testing.assert_array_equal(t1, t2)
        for a, b in zip(z1, z2):
            np.testing.assert_array_equal(a, b)

    def test_block_and_parallel_invariance(self):
        cfg = ScenarioConfig(runs=6, steps=8).with_outlier_prob(0.1)
        methods = [method_from_name("stkf-aa"), method_from_name("kf-am")]
        base = run_experiment(cfg, methods)
        blocked = run_experiment(cfg, methods, block=2)
        parallel = run_experiment(cfg, methods, parallel=2)
        for name in ("stkf-aa", "kf-am"):
            np.testing.assert_allclose(blocked.position_rmse[name], base.position_rmse[name], rtol=1e-12)
            np.testing.assert_allclose(parallel.position_rmse[name], base.position_rmse[name], rtol=1e-12)

    def test_sweep_shape(self):
        cfg = ScenarioConfig(runs=2, steps=3)
        probs = [0.0, 0.02, 0.04]
        reports = run_sweep(cfg, [method_from_name("stkf-aa"), method_from_name("kf-single")], probs)
        rows = [row for r in reports for row in r.summary_rows()]
        assert [(row["p_o"], row["method"]) for row in rows] == [(p, m) for p in probs for m in ("stkf-aa", "kf-single")]

    def test_weights_reported_for_aa_only(self):
        cfg = ScenarioConfig(runs=2, steps=3)
        report = run_experiment(cfg, [method_from_name(n) for n in ("stkf-aa", "stkf-ci", "stkf-single")])
        assert 0 < report.mean_weight("stkf-aa") < 1
        assert np.isnan(report.mean_weight("stkf-ci"))
        assert np.isnan(report.mean_weight("stkf-single"))

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            method_from_name("stkf-magic")

    def test_noise_convention_flag(self):
        cfg = ScenarioConfig()
        _, scale_models = filter_models(cfg, FilterKind.STKF)
        _, cov_models = filter_models(ScenarioConfig(noise_convention="covariance"), FilterKind.STKF)
        _, kf_models = filter_models(ScenarioConfig(noise_convention="covariance"), FilterKind.KF)
        np.testing.assert_allclose(scale_models[0].r_scale, 400.0 * np.eye(2))
        np.testing.assert_allclose(cov_models[0].r_scale, 400.0 / 3.0 * np.eye(2))
        np.testing.assert_allclose(kf_models[0].r_scale, 400.0 * np.eye(2))
