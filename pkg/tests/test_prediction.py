"""Moment rollout: closed-form matrix-power results vs one-step recursion."""
from __future__ import annotations

import numpy as np
import pytest

from tracksim.prediction import (
    GaussianBelief,
    one_step_predict,
    rollout_cov,
    rollout_mean,
)
from tracksim.world import build_dynamics


def recursive_moments(model, mu, sigma, controls):
    """Independent oracle: iterate the one-step moment equations directly."""
    means, covs = [], []
    m, s = np.asarray(mu, float), np.asarray(sigma, float)
    for u in controls:
        m = model.A @ m + model.B @ np.asarray(u, float)
        s = model.A @ s @ model.A.T + model.Q
        means.append(m.copy())
        covs.append(s.copy())
    return np.array(means), np.array(covs)


class TestRolloutMean:
    def test_zero_everything(self, model):
        out = rollout_mean(model, np.zeros(6), np.zeros((5, 3)))
        assert np.array_equal(out, np.zeros((5, 6)))

    def test_single_step_velocity(self, model):
        mu = np.array([0.0, 0.0, 0.0, 1.0, 0.0, 0.0])
        out = rollout_mean(model, mu, np.zeros((1, 3)))
        assert np.allclose(out[0], [1.0, 0.0, 0.0, 0.8, 0.0, 0.0])

    def test_two_step_hand_iteration(self, model):
        controls = np.array([[1300.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        out = rollout_mean(model, np.zeros(6), controls)
        # step 1: v=(1,0,0); step 2: p += v, v *= 0.8
        assert out[1, 0] == pytest.approx(1.0)
        assert out[1, 3] == pytest.approx(0.8)

    def test_matches_recursion(self, model):
        rng = np.random.default_rng(3)
        mu = rng.normal(size=6) * 100
        controls = rng.normal(size=(50, 3)) * 1000
        out = rollout_mean(model, mu, controls)
        ref, _ = recursive_moments(model, mu, np.zeros((6, 6)), controls)
        assert np.allclose(out, ref, rtol=1e-9, atol=1e-9)


class TestRolloutCov:
    def test_zero_cov_zero_q(self):
        m = build_dynamics(1.0, 0.2, 1300.0, np.zeros(6))
        out = rollout_cov(m, np.zeros((6, 6)), 4)
        assert np.array_equal(out, np.zeros((4, 6, 6)))

    def test_single_step(self, model):
        sigma = np.diag([200.0, 200.0, 1e-10, 20.0, 20.0, 1e-10])
        out = rollout_cov(model, sigma, 1)
        ref = model.A @ sigma @ model.A.T + model.Q
        assert np.allclose(out[0], ref, rtol=1e-12)

    def test_matches_recursion_t50(self, model):
        sigma = np.diag([200.0, 200.0, 1e-10, 20.0, 20.0, 1e-10])
        out = rollout_cov(model, sigma, 50)
        _, ref = recursive_moments(model, np.zeros(6), sigma, np.zeros((50, 3)))
        scale = np.abs(ref).max()
        assert np.abs(out - ref).max() / scale <= 1e-6

    def test_control_independent(self, model):
        # the covariance recursion never sees the controls at all
        sigma = np.diag([200.0, 200.0, 1e-10, 20.0, 20.0, 1e-10])
        assert rollout_cov(model, sigma, 10).shape == (10, 6, 6)

    def test_symmetric_psd(self, model):
        rng = np.random.default_rng(5)
        r = rng.normal(size=(6, 6))
        sigma = r @ r.T
        out = rollout_cov(model, sigma, 30)
        for s in out:
            assert np.allclose(s, s.T, atol=1e-12)
            assert np.linalg.eigvalsh(s).min() >= -1e-9

    def test_rejects_non_psd(self, model):
        with pytest.raises(ValueError):
            rollout_cov(model, -np.eye(6), 3)


class TestOneStepPredict:
    def test_zero_belief(self):
        m = build_dynamics(1.0, 0.2, 1300.0, np.zeros(6))
        b = GaussianBelief(mean=np.zeros(6), cov=np.zeros((6, 6)))
        out = one_step_predict(m, b, np.zeros(3))
        assert np.array_equal(out.mean, np.zeros(6))
        assert np.array_equal(out.cov, np.zeros((6, 6)))

    def test_equals_rollout_t1(self, model):
        rng = np.random.default_rng(9)
        mu = rng.normal(size=6)
        r = rng.normal(size=(6, 6))
        b = GaussianBelief(mean=mu, cov=r @ r.T)
        u = rng.normal(size=3)
        out = one_step_predict(model, b, u)
        assert np.allclose(out.mean, rollout_mean(model, mu, u[None, :])[0])
        assert np.allclose(out.cov, rollout_cov(model, b.cov, 1)[0])

    @pytest.mark.parametrize("seed", range(20))
    def test_trace_grows_without_friction(self, seed):
        m = build_dynamics(1.0, 0.0, 1300.0, np.ones(6))
        rng = np.random.default_rng(seed)
        r = rng.normal(size=(6, 6))
        b = GaussianBelief(mean=np.zeros(6), cov=r @ r.T)
        out = one_step_predict(m, b, np.zeros(3))
        assert np.trace(out.cov) > np.trace(b.cov)
