"""Per-target particle filter with a clutter-aware measurement likelihood.

The weighting factor drops the particle-independent Poisson/factorial
prefactors of the full random-set likelihood (they cancel in the
normalization), leaving per particle:

    w(x) = (1 - p_D) * rate * density            (floor, clutter explains all)
         + p_D * sum_phi N(wrap(phi - bearing(x)); 0, sigma^2)

and (1 - p_D) for an empty measurement set. The literal set likelihood,
factorials and Poisson pmf included, is kept as `exact_set_likelihood` for
cross-checking.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .prediction import GaussianBelief
from .sensing import MeasurementSet, SensorModel, TWO_PI, bearings_to, wrap_angle
from .world import DynamicsModel, ValidationError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FilterParams:
    n_particles: int = 2000
    ess_fraction: float = 0.5    # resample when ESS < fraction * N
    jitter: float = 0.0          # optional positional roughening std


@dataclass(frozen=True)
class ParticleBelief:
    particles: np.ndarray   # (N, 6)
    weights: np.ndarray     # (N,), normalized

    def __post_init__(self):
        p = np.asarray(self.particles, float)
        w = np.asarray(self.weights, float)
        if p.ndim != 2 or p.shape[1] != 6 or w.shape != (p.shape[0],):
            raise ValidationError("belief", f"bad shapes {p.shape}, {w.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValidationError("weights", "must be >= 0 and sum to 1")
        object.__setattr__(self, "particles", p)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.particles.shape[0]

    @property
    def ess(self) -> float:
        return effective_sample_size(self.weights)


def effective_sample_size(weights: np.ndarray) -> float:
    return float(1.0 / np.sum(np.square(weights)))


def _sample_gaussian(mean, cov, n, rng):
    # eigh-based sampling tolerates singular (e.g. zero) covariances
    return rng.multivariate_normal(mean, cov, size=n, method="eigh")


def init_belief(mu0, sigma0, n: int, rng: np.random.Generator) -> ParticleBelief:
    sigma0 = np.asarray(sigma0, float)
    if np.min(np.linalg.eigvalsh((sigma0 + sigma0.T) / 2)) < -1e-9:
        raise ValidationError("sigma0", "must be PSD")
    particles = _sample_gaussian(np.asarray(mu0, float), sigma0, n, rng)
    return ParticleBelief(particles=particles, weights=np.full(n, 1.0 / n))


def pf_predict(b: ParticleBelief, model: DynamicsModel, u,
               rng: np.random.Generator) -> ParticleBelief:
    """Propagate every particle through the dynamics with fresh process noise."""
    noise = _sample_gaussian(np.zeros(6), model.Q, b.n, rng)
    particles = b.particles @ model.A.T + model.B @ np.asarray(u, float) + noise
    return ParticleBelief(particles=particles, weights=b.weights)


def measurement_weights(meas: MeasurementSet, particles: np.ndarray,
                        agent_pos, model: SensorModel) -> np.ndarray:
    """Vectorized per-particle likelihood factor; shape (N,)."""
    n_meas = len(meas)
    N = np.atleast_2d(particles).shape[0]
    if n_meas == 0:
        return np.full(N, 1.0 - model.p_detect)
    pred = bearings_to(particles, agent_pos)                       # (N,)
    resid = wrap_angle(meas.bearings[None, :] - pred[:, None])     # (N, n)
    s2 = model.sigma_phi ** 2
    gauss = np.exp(-0.5 * resid ** 2 / s2) / math.sqrt(TWO_PI * s2)
    floor = (1.0 - model.p_detect) * model.clutter_rate * model.clutter_density
    return floor + model.p_detect * gauss.sum(axis=1)


def measurement_weight(meas: MeasurementSet, particle, agent_pos,
                       model: SensorModel) -> float:
    return float(measurement_weights(meas, np.atleast_2d(particle),
                                     agent_pos, model)[0])


def exact_set_likelihood(meas: MeasurementSet, particle, agent_pos,
                         model: SensorModel) -> float:
    """Literal set likelihood with factorials and the Poisson pmf.

    Test oracle only: proportional to measurement_weight with a
    particle-independent ratio. Accumulates in log space for large sets.
    """
    n = len(meas)
    lam = model.clutter_rate
    dens = model.clutter_density
    pd = model.p_detect

    def poisson_pmf(k, rate):
        return math.exp(-rate + k * math.log(rate) - math.lgamma(k + 1)) \
            if rate > 0 else (1.0 if k == 0 else 0.0)

    if n == 0:
        return (1.0 - pd) * poisson_pmf(0, lam)

    pred = bearings_to(np.atleast_2d(particle), agent_pos)[0]
    resid = wrap_angle(meas.bearings - pred)
    s2 = model.sigma_phi ** 2
    c = np.exp(-0.5 * resid ** 2 / s2) / math.sqrt(TWO_PI * s2)

    if n <= 20:
        term1 = (1.0 - pd) * math.factorial(n) * poisson_pmf(n, lam) * dens ** n
        term2 = math.factorial(n - 1) * poisson_pmf(n - 1, lam) * pd \
            * float(np.sum(c)) * dens ** (n - 1)
        return term1 + term2
    # log-space: n! Psi(n; lam) = exp(-lam) lam^n; (n-1)! Psi(n-1; lam) likewise
    log_common = -lam + (n - 1) * (math.log(lam) + math.log(dens))
    term1 = (1.0 - pd) * math.exp(log_common + math.log(lam) + math.log(dens))
    term2 = pd * float(np.sum(c)) * math.exp(log_common)
    return term1 + term2


def pf_update(b: ParticleBelief, meas: MeasurementSet, agent_pos,
              model: SensorModel, rng: np.random.Generator,
              ess_fraction: float = 0.5,
              jitter: float = 0.0) -> tuple[ParticleBelief, bool]:
    """Reweight by the measurement likelihood, renormalize, resample on low ESS.

    `jitter` > 0 roughens the planar positions after a resample to fight
    sample impoverishment. Returns (posterior, resampled).
    """
    w = b.weights * measurement_weights(meas, b.particles, agent_pos, model)
    total = w.sum()
    if not np.isfinite(total) or total <= 0.0:
        log.warning("degenerate measurement update (all weights zero); "
                    "falling back to uniform weights")
        w = np.full(b.n, 1.0 / b.n)
    else:
        w = w / total
    posterior = ParticleBelief(particles=b.particles, weights=w)
    if posterior.ess < ess_fraction * b.n:
        out = systematic_resample(posterior, rng)
        if jitter > 0.0:
            pts = out.particles.copy()
            pts[:, :2] += rng.normal(0.0, jitter, size=(out.n, 2))
            out = ParticleBelief(particles=pts, weights=out.weights)
        return out, True
    return posterior, False


def systematic_resample(b: ParticleBelief,
                        rng: np.random.Generator) -> ParticleBelief:
    """Systematic scheme: one uniform offset, N evenly spaced pointers."""
    n = b.n
    positions = (rng.random() + np.arange(n)) / n
    cumsum = np.cumsum(b.weights)
    cumsum[-1] = 1.0  # guard against rounding in the last bin
    idx = np.searchsorted(cumsum, positions, side="left")
    return ParticleBelief(particles=b.particles[idx],
                          weights=np.full(n, 1.0 / n))


def belief_moments(b: ParticleBelief) -> GaussianBelief:
    """Weighted mean and (symmetrized) weighted covariance."""
    mean = b.weights @ b.particles
    d = b.particles - mean
    cov = (b.weights[:, None] * d).T @ d
    return GaussianBelief(mean=mean, cov=(cov + cov.T) / 2)
