"""Sensor-carrier motion selection: one-step lookahead over a polar lattice,
scoring each candidate by the summed pseudo-posterior covariance trace.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .filtering import ParticleBelief
from .sensing import SensorModel, TWO_PI, bearings_to, true_bearing, wrap_angle

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AgentMotionModel:
    radial_step: float   # m
    n_radial: int
    n_theta: int
    altitude: float      # m, fixed flight altitude

    def __post_init__(self):
        if self.radial_step <= 0 or self.altitude <= 0:
            raise ValueError("radial_step and altitude must be > 0")
        if self.n_radial < 1 or self.n_theta < 1:
            raise ValueError("n_radial and n_theta must be >= 1")


def admissible_states(pos: np.ndarray, motion: AgentMotionModel,
                      env_min=None, env_max=None) -> np.ndarray:
    """Reachable positions: hover plus the polar lattice, deduplicated and
    clipped to the environment footprint. Hover is always row 0."""
    pos = np.asarray(pos, float)
    dtheta = TWO_PI / motion.n_theta
    states = [np.array([pos[0], pos[1], motion.altitude])]
    for lam in range(1, motion.n_radial + 1):
        for kap in range(1, motion.n_theta + 1):
            states.append(np.array([
                pos[0] + lam * motion.radial_step * np.cos(kap * dtheta),
                pos[1] + lam * motion.radial_step * np.sin(kap * dtheta),
                motion.altitude]))
    out = []
    seen = set()
    for s in states:
        key = (round(s[0], 9), round(s[1], 9))
        if key in seen:
            continue
        seen.add(key)
        if env_min is not None and np.any(s[:2] < np.asarray(env_min)[:2]):
            continue
        if env_max is not None and np.any(s[:2] > np.asarray(env_max)[:2]):
            continue
        out.append(s)
    return np.asarray(out).reshape(-1, 3)


def ideal_measurement(pred_pos, candidate_pos) -> float:
    """Noise-free bearing the candidate position would see for a predicted mean."""
    return true_bearing(pred_pos, candidate_pos)


def pseudo_posterior_trace(predicted: ParticleBelief, candidate_pos,
                           z: float, model: SensorModel,
                           position_only: bool = False) -> float:
    """Covariance trace after a hypothetical clean-bearing update.

    The update uses a single Gaussian bearing likelihood (detection certain,
    no clutter); the input belief is left untouched.
    """
    pred = bearings_to(predicted.particles, candidate_pos)
    resid = wrap_angle(z - pred)
    w = predicted.weights * np.exp(-0.5 * resid ** 2 / model.sigma_phi ** 2)
    total = w.sum()
    if not np.isfinite(total) or total <= 0.0:
        w = predicted.weights
    else:
        w = w / total
    return _weighted_trace(predicted.particles, w, position_only)


def _weighted_trace(particles: np.ndarray, w: np.ndarray,
                    position_only: bool) -> float:
    cols = slice(0, 3) if position_only else slice(None)
    x = particles[:, cols]
    mean = w @ x
    return float(np.sum(w @ (x ** 2) - mean ** 2))


def select_next_state(beliefs: list[ParticleBelief], pos: np.ndarray,
                      motion: AgentMotionModel, model: SensorModel,
                      env_min=None, env_max=None,
                      position_only: bool = False):
    """Argmin over admissible states of the summed pseudo-posterior trace.

    `beliefs` must already be one-step predicted. Returns (state, info dict).
    Ties go to the earliest candidate, i.e. hover first.
    """
    candidates = admissible_states(pos, motion, env_min, env_max)
    if candidates.shape[0] == 0:
        log.warning("no admissible states after environment clipping; hovering")
        hover = np.array([pos[0], pos[1], motion.altitude])
        return hover, {"n_candidates": 0, "trace_sum": np.nan,
                       "per_target": []}
    totals = np.zeros(candidates.shape[0])
    per_target = np.zeros((candidates.shape[0], len(beliefs)))
    s2 = model.sigma_phi ** 2
    for j, belief in enumerate(beliefs):
        mean_pos = belief.weights @ belief.particles[:, :3]
        d = mean_pos[:2] - candidates[:, :2]
        degenerate = np.hypot(d[:, 0], d[:, 1]) < 1e-12
        z = wrap_angle(np.arctan2(d[:, 0], d[:, 1]))          # (K,)
        # per-candidate particle bearings: (K, N)
        dp = belief.particles[None, :, :2] - candidates[:, None, :2]
        pred = wrap_angle(np.arctan2(dp[:, :, 0], dp[:, :, 1]))
        resid = wrap_angle(z[:, None] - pred)
        w = belief.weights[None, :] * np.exp(-0.5 * resid ** 2 / s2)
        tot = w.sum(axis=1)
        bad = ~np.isfinite(tot) | (tot <= 0.0) | degenerate
        w = np.where(bad[:, None], belief.weights[None, :], w / np.where(tot > 0, tot, 1.0)[:, None])
        if np.any(degenerate):
            log.debug("skipping degenerate-geometry candidates for one target")
        cols = slice(0, 3) if position_only else slice(None)
        x = belief.particles[:, cols]
        mean = w @ x
        traces = np.sum(w @ (x ** 2) - mean ** 2, axis=1)
        per_target[:, j] = traces
        totals += traces
    best = int(np.argmin(totals))
    info = {"n_candidates": int(candidates.shape[0]),
            "trace_sum": float(totals[best]),
            "per_target": per_target[best].tolist()}
    return candidates[best], info
