import math

import numpy as np
import pytest
from scipy import integrate

from drivecluster.dynamics import Control, State
from drivecluster.ekfsim import (
    BeliefState,
    EkfConfig,
    EkfNumericalError,
    chi2_4_survival,
    compare,
    ekf_predict,
    ekf_update,
    mahalanobis2,
)
from drivecluster.trajdata import (
    NoiseSpec,
    ScenarioSpec,
    Trajectory,
    TrajectoryPoint,
    synthesize,
)
from conftest import by_archetype


def straight_trajectory(tid="t", v=5.0, duration=2.0, dt=0.04, y=0.0):
    n = int(round(duration / dt))
    pts = tuple(
        TrajectoryPoint(i * dt, v * i * dt, y, 0.0, v, 0.0) for i in range(n + 1)
    )
    return Trajectory(tid, pts, 2.5)


class TestEkfConfig:
    def test_default_noise_values(self):
        cfg = EkfConfig()
        assert cfg.r_diag == (0.01, 0.01, 0.005, 0.01)
        assert cfg.q_diag == (0.05, 0.05, 0.01, 0.1)
        assert cfg.steps_per_update == 8

    def test_rejects_nonpositive_noise(self):
        with pytest.raises(ValueError):
            EkfConfig(r_diag=(0.01, 0.0, 0.005, 0.01))

    def test_update_period_must_align_with_steps(self):
        with pytest.raises(ValueError):
            EkfConfig(update_period=0.075)
        with pytest.raises(ValueError):
            EkfConfig(update_period=0.02)  # not a multiple of the data step


class TestPredict:
    def test_zero_prior_covariance_gives_process_noise(self):
        cfg = EkfConfig()
        b = BeliefState(State(0, 0, 0, 5), np.zeros((4, 4)))
        out = ekf_predict(b, Control(0, 0), l=2.5, cfg=cfg)
        assert np.allclose(out.sigma, cfg.r_step)

    def test_four_predicts_span_one_data_step(self):
        cfg = EkfConfig()
        b = BeliefState(State(0, 0, 0, 5), cfg.q_matrix.copy())
        for _ in range(4):
            b = ekf_predict(b, Control(0, 0), l=2.5, cfg=cfg)
        assert b.mu.s_x == pytest.approx(5 * 0.04, rel=1e-12)

    def test_trace_never_below_process_noise(self):
        cfg = EkfConfig()
        rng = np.random.default_rng(5)
        for _ in range(25):
            a = rng.normal(size=(4, 4))
            sigma = a @ a.T  # PSD
            x = State(rng.uniform(-5, 5), rng.uniform(-5, 5),
                      rng.uniform(-3, 3), rng.uniform(0, 10))
            u = Control(rng.uniform(-3, 3), rng.uniform(-0.5, 0.5))
            out = ekf_predict(BeliefState(x, sigma), u, l=2.5, cfg=cfg)
            assert np.trace(out.sigma) >= np.trace(cfg.r_step) - 1e-12


class TestUpdate:
    def test_zero_innovation_keeps_mean_and_shrinks_covariance(self):
        cfg = EkfConfig()
        sigma = np.diag([0.2, 0.2, 0.05, 0.3])
        b = BeliefState(State(1, 2, 0.3, 4), sigma)
        out = ekf_update(b, State(1, 2, 0.3, 4), cfg)
        assert out.mu == pytest.approx(b.mu)
        assert np.trace(out.sigma) < np.trace(sigma)

    def test_uninformative_measurement_is_noop(self):
        cfg = EkfConfig(q_diag=(5e7, 5e7, 1e7, 1e8))
        b = BeliefState(State(1, 2, 0.3, 4), np.diag([0.2, 0.2, 0.05, 0.3]))
        out = ekf_update(b, State(5, -3, 1.0, 9), cfg)
        assert np.linalg.norm(np.array(out.mu) - np.array(b.mu)) < 1e-6

    def test_heading_innovation_wraps_across_seam(self):
        cfg = EkfConfig()
        sigma = np.diag([0.1, 0.1, 0.05, 0.1])
        b = BeliefState(State(0, 0, 3.1, 4), sigma)
        out = ekf_update(b, State(0, 0, -3.1, 4), cfg)
        # innovation is +0.083 rad, not -6.2: the heading moves forward
        # (and the corrected mean re-wraps past the seam)
        k = 0.05 / (0.05 + cfg.q_diag[2])
        from drivecluster.dynamics import wrap_angle

        expected = wrap_angle(3.1 + k * (2 * math.pi - 6.2))
        assert out.mu.theta == pytest.approx(expected, abs=1e-9)

    def test_unusable_innovation_covariance_raises(self):
        cfg = EkfConfig()
        bad = np.full((4, 4), np.nan)
        with pytest.raises(EkfNumericalError):
            ekf_update(BeliefState(State(0, 0, 0, 1), bad), State(0, 0, 0, 1), cfg)


class TestMahalanobis:
    def test_zero_residual(self):
        b = BeliefState(State(1, 2, 0.3, 4), np.eye(4))
        assert mahalanobis2(b, State(1, 2, 0.3, 4)) == 0.0

    def test_identity_metric(self):
        b = BeliefState(State(0, 0, 0, 0), np.eye(4))
        assert mahalanobis2(b, State(1, 0, 0, 0)) == pytest.approx(1.0)

    def test_diagonal_scaling(self):
        b = BeliefState(State(0, 0, 0, 0), np.diag([4.0, 1, 1, 1]))
        assert mahalanobis2(b, State(2, 0, 0, 0)) == pytest.approx(1.0)

    def test_singular_covariance_is_infinite(self):
        b = BeliefState(State(0, 0, 0, 0), np.zeros((4, 4)))
        assert math.isinf(mahalanobis2(b, State(1, 0, 0, 0)))

    def test_heading_residual_wraps(self):
        b = BeliefState(State(0, 0, 3.1, 0), np.eye(4))
        d2 = mahalanobis2(b, State(0, 0, -3.1, 0))
        assert d2 == pytest.approx((2 * math.pi - 6.2) ** 2, rel=1e-9)


class TestChi2Survival:
    def test_zero_distance_full_mass(self):
        assert chi2_4_survival(0.0) == 1.0

    def test_95th_percentile(self):
        assert chi2_4_survival(9.4877) == pytest.approx(0.0500, abs=1e-4)

    def test_closed_form_value(self):
        assert chi2_4_survival(2.0) == pytest.approx(2.0 * math.exp(-1.0), rel=1e-12)

    def test_negative_rejected_and_infinite_is_zero(self):
        with pytest.raises(ValueError):
            chi2_4_survival(-1e-9)
        assert chi2_4_survival(math.inf) == 0.0

    def test_matches_numerical_integration(self):
        def density(x):
            return 0.25 * x * math.exp(-0.5 * x)

        for d2 in np.linspace(0.0, 50.0, 26):
            tail, _ = integrate.quad(density, d2, np.inf)
            assert abs(chi2_4_survival(float(d2)) - tail) <= 1e-9


class TestCompare:
    def test_self_comparison_high_membership(self, synth_set, default_cfg):
        mset, _ = synth_set
        for traj in mset.samples[:5]:
            series = compare(traj, traj, default_cfg)
            assert np.all(series.probs >= 0.99)
            assert math.isfinite(series.nll)
            assert series.nll < 1.0

    def test_update_cadence(self, default_cfg):
        a = straight_trajectory("a", duration=2.0)
        b = straight_trajectory("b", duration=2.0)
        series = compare(a, b, default_cfg)
        assert series.n_updates == 25

    def test_cadence_matches_floor_rule(self, default_cfg):
        rng = np.random.default_rng(2)
        for _ in range(10):
            dur = float(rng.uniform(0.3, 4.0))
            a = straight_trajectory("a", duration=dur)
            b = straight_trajectory("b", duration=dur + rng.uniform(0, 2))
            t_ov = min(a.duration, b.duration)
            series = compare(a, b, default_cfg)
            assert series.n_updates == int(t_ov / default_cfg.update_period + 1e-9)

    def test_overlap_shorter_than_update_period_rejected(self, default_cfg):
        a = straight_trajectory("a", duration=0.04)
        with pytest.raises(ValueError):
            compare(a, a, default_cfg)

    def test_same_archetype_finite_cross_archetype_infinite(self, zero_noise_set,
                                                            default_cfg):
        mset, labels = zero_noise_set
        groups = by_archetype(mset, labels)
        direct = mset.sample_by_id(groups["direct"][0])
        stop = mset.sample_by_id(groups["stop"][0])
        stop2 = mset.sample_by_id(groups["stop"][1])
        assert math.isinf(compare(direct, stop, default_cfg).nll)
        assert math.isfinite(compare(stop2, stop, default_cfg).nll)

    def test_probabilities_and_nll_ranges(self, small_set, default_cfg):
        mset, _ = small_set
        a, b = mset.samples[0], mset.samples[5]
        series = compare(a, b, default_cfg)
        assert np.all((series.probs >= 0.0) & (series.probs <= 1.0))
        assert series.nll >= 0.0

    def test_self_is_no_worse_than_any_sample(self, zero_noise_set, default_cfg):
        mset, _ = zero_noise_set
        centroid = mset.samples[0]
        self_nll = compare(centroid, centroid, default_cfg).nll
        for sample in mset.samples:
            assert self_nll <= compare(sample, centroid, default_cfg).nll + 1e-9

    def test_nll_monotone_in_speed_offset(self, default_cfg):
        centroid = straight_trajectory("c", v=8.0, duration=4.0)
        values = []
        for delta in (0.0, 0.5, 1.0, 2.0):
            sample = straight_trajectory("s", v=8.0 - delta, duration=4.0)
            values.append(compare(sample, centroid, default_cfg).nll)
        assert all(b >= a - 1e-9 for a, b in zip(values, values[1:]))
        assert values[1] > values[0]

    def test_trace_capture(self, default_cfg):
        a = straight_trajectory("a", duration=1.0)
        series = compare(a, a, default_cfg, with_trace=True)
        assert series.trace is not None
        assert series.trace.shape == (series.n_updates, 11)

    def test_comparison_is_pure(self, small_set, default_cfg):
        mset, _ = small_set
        a, b = mset.samples[0], mset.samples[7]
        s1 = compare(a, b, default_cfg)
        s2 = compare(a, b, default_cfg)
        assert np.array_equal(s1.probs, s2.probs)
        assert s1.nll == s2.nll
