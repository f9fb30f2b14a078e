import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sepsisrl.cohort import Cohort, DiscreteAction, PatientTrajectory
from sepsisrl.errors import EvaluationError, ExportError, UsageError
from sepsisrl.evaluation import (CalibrationCurve, DREstimate, action_histogram, behavior_policy_from_counts,
                                 calibration_from_samples, discounted_return, dosage_diff_mortality, dr_estimate,
                                 dr_value, latent_pca_export, mortality_from_return, mortality_se_from_return,
                                 physician_baseline, soften_greedy)
from sepsisrl.features import N_FEATURES

from oracles import PI_B3, PI_E3, P3, R3, mc_discounted_return, policy_evaluation, sample_trajectory


class TestCalibration:
    def test_bins_and_proportions(self):
        returns = np.array([-14.0] * 60 + [14.0] * 60)
        labels = np.array([1] * 45 + [0] * 15 + [1] * 6 + [0] * 54)
        curve = calibration_from_samples(returns, labels, n_bins=2, min_count=50)
        assert curve.counts.tolist() == [60, 60]
        assert np.allclose(curve.proportions, [0.75, 0.1])
        assert np.allclose(curve.centers, [-7.5, 7.5])

    def test_sparse_bins_are_merged(self):
        returns = np.concatenate([np.full(100, -10.0), np.full(3, 1.0), np.full(100, 10.0)])
        curve = calibration_from_samples(returns, np.zeros(returns.size), n_bins=5, min_count=50)
        assert curve.counts.min() >= 50
        assert curve.counts.sum() == returns.size

    def test_out_of_range_goes_to_end_bins(self):
        curve = calibration_from_samples([-100.0, 100.0], [1, 0], n_bins=2, min_count=1)
        assert curve.counts.tolist() == [1, 1]

    def test_interpolation_and_clamping(self):
        curve = CalibrationCurve(np.array([-15.0, 0.0, 15.0]), np.array([0.8, 0.2]), np.array([100, 100]), 50)
        assert mortality_from_return(curve, 0.0) == pytest.approx(0.5)
        assert mortality_from_return(curve, 20.0) == pytest.approx(0.2)
        assert mortality_se_from_return(curve, -7.5) == pytest.approx(np.sqrt(0.8 * 0.2 / 100))

    def test_empty_and_misaligned(self):
        with pytest.raises(UsageError):
            calibration_from_samples([], [])
        with pytest.raises(UsageError):
            calibration_from_samples([1.0], [1, 0])


class TestPolicies:
    def test_laplace_smoothing(self):
        pb = behavior_policy_from_counts([0, 0, 0], [1, 1, 2], n_clusters=2, smoothing=0.5, n_actions=3)
        assert np.allclose(pb.probs[0], [0.5 / 4.5, 2.5 / 4.5, 1.5 / 4.5])
        assert np.allclose(pb.probs[1], [1 / 3] * 3)

    def test_unsmoothed_unvisited_cluster(self):
        with pytest.raises(EvaluationError):
            behavior_policy_from_counts([0], [0], n_clusters=2, smoothing=0.0, n_actions=3)

    def test_soften_greedy(self):
        p = soften_greedy(np.array([[0.0, 5.0, 5.0, 1.0]]), 0.01)
        assert np.allclose(p, [[0.01 / 3, 0.99, 0.01 / 3, 0.01 / 3]])
        assert p.sum() == pytest.approx(1.0)


class TestDR:
    def test_single_step_formula(self):
        # Vhat = 0.5 * 2 + 0.5 * 4 = 3; rho = 0.5 / 0.25; V = 3 + 2 * (10 - 2)
        v = dr_value([10.0], [0], [[0.5, 0.5]], [0.25], [[2.0, 4.0]], gamma=0.9)
        assert v == pytest.approx(19.0)

    def test_zero_behaviour_probability(self):
        with pytest.raises(EvaluationError):
            dr_value([1.0], [0], [[1.0, 0.0]], [0.0], [[0.0, 0.0]], 0.9)

    def test_on_policy_zero_model_is_discounted_return(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            s, a, r = sample_trajectory(P3, R3, PI_B3, rng)
            pe = PI_B3[s]
            v = dr_value(r, a, pe, pe[np.arange(a.size), a], np.zeros_like(pe), 0.9)
            assert v == discounted_return(r, 0.9)
            assert v == pytest.approx(mc_discounted_return(r, 0.9), abs=1e-12)

    def test_unbiased_for_both_models(self):
        gamma = 0.9
        Q = policy_evaluation(P3, R3, PI_E3, gamma)
        V = float(PI_E3[0] @ Q[0])
        rng = np.random.default_rng(1)
        zero, model = [], []
        for _ in range(3000):
            s, a, r = sample_trajectory(P3, R3, PI_B3, rng)
            pe, pb = PI_E3[s], PI_B3[s, a]
            zero.append(dr_value(r, a, pe, pb, np.zeros_like(pe), gamma))
            model.append(dr_value(r, a, pe, pb, Q[s], gamma))
        for vals in (DREstimate(np.array(zero)), DREstimate(np.array(model))):
            assert abs(vals.mean - V) < 3 * vals.standard_error

    def test_estimate_over_cohort(self):
        trajs = [PatientTrajectory("a", np.zeros((2, N_FEATURES)), np.zeros((2, 2)), False,
                                   actions=[0, 1], rewards=[0.0, 15.0]),
                 PatientTrajectory("b", np.zeros((1, N_FEATURES)), np.zeros((1, 2)), True,
                                   actions=[2], rewards=[-15.0])]
        pe = np.full((3, 25), 1 / 25)
        est = dr_estimate(Cohort(trajs), pe, np.full(3, 1 / 25), np.zeros((3, 25)), 0.5)
        assert est.values.tolist() == [7.5, -15.0]
        assert est.standard_error == pytest.approx(np.std([7.5, -15.0], ddof=1) / np.sqrt(2))

    def test_physician_baseline(self):
        trajs = [PatientTrajectory("a", np.zeros((2, N_FEATURES)), np.zeros((2, 2)), False,
                                   actions=[0, 1], rewards=[0.0, 15.0])]
        curve = CalibrationCurve(np.array([-15.0, 15.0]), np.array([0.3]), np.array([100]), 50)
        ev = physician_baseline(Cohort(trajs), curve, 0.5)
        assert ev.dr.mean == 7.5 and ev.mortality == pytest.approx(0.3)


class TestHistograms:
    def test_action_histogram_indexing(self):
        h = action_histogram([DiscreteAction(1, 3), DiscreteAction(1, 3), DiscreteAction(4, 0)])
        assert h[1, 3] == 2 and h[4, 0] == 1 and h.sum() == 3
        assert np.array_equal(action_histogram([8, 8, 20]), h)

    def test_dosage_difference(self):
        rec = [DiscreteAction(2, 0).index, DiscreteAction(0, 4).index, DiscreteAction(1, 1).index]
        log = [DiscreteAction(0, 0).index, DiscreteAction(0, 0).index, DiscreteAction(1, 1).index]
        iv, vp = dosage_diff_mortality(rec, log, [1, 0, 1])
        assert iv.differences.tolist() == list(range(-4, 5))
        assert iv.counts[4 + 2] == 1 and iv.counts[4 + 0] == 2
        assert vp.counts[4 + 4] == 1 and vp.deaths[4 + 0] == 2
        assert np.isnan(iv.mortality[0]) and iv.mortality[4] == 0.5

    def test_misaligned(self):
        with pytest.raises(UsageError):
            dosage_diff_mortality([0, 1], [0], [0, 1])


class TestPCA:
    def test_projection_against_svd(self):
        rng = np.random.default_rng(0)
        Z = rng.normal(size=(200, 5)) @ np.diag([5.0, 3.0, 1.0, 0.5, 0.1])
        out = latent_pca_export(Z, rng.integers(0, 2, 200))
        _, sv, vt = np.linalg.svd(Z - Z.mean(axis=0), full_matrices=False)
        assert np.allclose(out.eigenvalues, sv ** 2 / 199)
        for i in range(2):
            assert abs(abs(out.components[i] @ vt[i]) - 1.0) < 1e-9
        assert np.allclose(out.table[:, :2].mean(axis=0), 0.0, atol=1e-9)

    def test_sign_convention(self):
        Z = np.random.default_rng(1).normal(size=(50, 3))
        comps = latent_pca_export(Z, np.zeros(50)).components
        assert np.all(comps[np.arange(2), np.argmax(np.abs(comps), axis=1)] > 0)

    def test_errors(self):
        with pytest.raises(ExportError):
            latent_pca_export(np.zeros((10, 1)), np.zeros(10))
        with pytest.raises(ExportError):
            latent_pca_export(np.zeros((2, 3)), np.zeros(2))
        with pytest.raises(ExportError):
            latent_pca_export(np.ones((10, 3)), np.zeros(10))
        with pytest.raises(ExportError):
            latent_pca_export(np.random.default_rng(0).normal(size=(10, 3)), np.zeros(9))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 24), st.integers(0, 24), st.integers(0, 1)), min_size=1, max_size=60))
def test_histogram_conservation(rows):
    rec, log, died = map(list, zip(*rows))
    iv, vp = dosage_diff_mortality(rec, log, died)
    assert iv.counts.sum() == vp.counts.sum() == len(rows)
    assert iv.deaths.sum() == vp.deaths.sum() == sum(died)
    assert action_histogram(rec).sum() == len(rows)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=1, max_size=200), st.integers(1, 30), st.integers(1, 60))
def test_calibration_conserves_samples(returns, n_bins, min_count):
    labels = (np.arange(len(returns)) % 3 == 0).astype(float)
    curve = calibration_from_samples(returns, labels, n_bins=n_bins, min_count=min_count)
    assert curve.counts.sum() == len(returns)
    assert len(curve.counts) == 1 or curve.counts.min() >= min_count
    assert np.all(np.diff(curve.edges) > 0)
    assert np.all((curve.proportions >= 0) & (curve.proportions <= 1))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-15, 15), min_size=1, max_size=20), st.floats(0.0, 0.999))
def test_dr_with_perfect_match_and_zero_model_is_return(rewards, gamma):
    T = len(rewards)
    pe = np.full((T, 3), 1 / 3)
    a = np.zeros(T, dtype=int)
    assert dr_value(rewards, a, pe, pe[:, 0], np.zeros((T, 3)), gamma) == discounted_return(rewards, gamma)
