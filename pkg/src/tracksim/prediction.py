"""Closed-form propagation of Gaussian state moments over a horizon.

The mean at horizon step tau is A^(tau+1) mu + sum_{k<=tau} A^(tau-k) B u_k;
the covariance is A^(tau+1) S (A^T)^(tau+1) + sum_{k<=tau} A^(tau-k) Q (A^T)^(tau-k)
and does not depend on the controls. Matrix powers are built by repeated
multiplication (A is 6x6 and horizons are short), never by eigendecomposition.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .world import DynamicsModel, ValidationError


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray   # (6,)
    cov: np.ndarray    # (6, 6) symmetric PSD

    def __post_init__(self):
        m = np.asarray(self.mean, float)
        c = np.asarray(self.cov, float)
        if m.shape != (6,) or c.shape != (6, 6):
            raise ValidationError("belief", f"bad shapes {m.shape}, {c.shape}")
        if not np.allclose(c, c.T, atol=1e-9):
            raise ValidationError("belief.cov", "must be symmetric")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", (c + c.T) / 2)


def _sym(m: np.ndarray) -> np.ndarray:
    return (m + m.T) / 2


def matrix_powers(A: np.ndarray, n: int) -> np.ndarray:
    """[I, A, A^2, ..., A^n] as an (n+1, d, d) stack."""
    d = A.shape[0]
    powers = np.empty((n + 1, d, d))
    powers[0] = np.eye(d)
    for j in range(1, n + 1):
        powers[j] = A @ powers[j - 1]
    return powers


def rollout_mean(model: DynamicsModel, mu: np.ndarray,
                 controls: list[np.ndarray] | np.ndarray) -> np.ndarray:
    """Predicted means for each horizon step; returns (T, 6)."""
    controls = np.atleast_2d(np.asarray(controls, float))
    T = controls.shape[0]
    if T < 1:
        raise ValidationError("controls", "horizon must have at least one step")
    powers = matrix_powers(model.A, T)
    pb = powers @ model.B                       # (T+1, 6, 3), A^j B
    mu = np.asarray(mu, float)
    means = np.empty((T, 6))
    for tau in range(T):
        # sum_{k=0..tau} A^(tau-k) B u_k
        drive = np.einsum("kij,kj->i", pb[tau::-1], controls[:tau + 1])
        means[tau] = powers[tau + 1] @ mu + drive
    return means


def rollout_cov(model: DynamicsModel, sigma: np.ndarray, T: int) -> np.ndarray:
    """Predicted covariances for each horizon step; returns (T, 6, 6)."""
    if T < 1:
        raise ValidationError("T", "horizon must be >= 1")
    s0 = _sym(np.asarray(sigma, float))
    if np.min(np.linalg.eigvalsh(s0)) < -1e-9:
        raise ValidationError("sigma", "must be PSD")
    powers = matrix_powers(model.A, T)
    covs = np.empty((T, 6, 6))
    noise_sum = np.zeros((6, 6))
    for tau in range(T):
        noise_sum += powers[tau] @ model.Q @ powers[tau].T
        covs[tau] = _sym(powers[tau + 1] @ s0 @ powers[tau + 1].T + noise_sum)
    return covs


def one_step_predict(model: DynamicsModel, belief: GaussianBelief,
                     u: np.ndarray) -> GaussianBelief:
    """Gaussian prediction: mean -> A mu + B u, cov -> A S A^T + Q."""
    mean = model.A @ belief.mean + model.B @ np.asarray(u, float)
    cov = _sym(model.A @ belief.cov @ model.A.T + model.Q)
    return GaussianBelief(mean=mean, cov=cov)
