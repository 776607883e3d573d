"""Target dynamics, cuboid obstacle geometry, and goal regions.

State layout everywhere: 6-vector [x, y, z, vx, vy, vz] in SI units.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ValidationError(ValueError):
    """A parameter or config field failed a range/shape check."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


@dataclass(frozen=True)
class DynamicsModel:
    """Double-integrator with velocity friction, discretized at dt.

    A = [[I, dt*I], [0, (1-friction)*I]],  B = [[0], [dt/mass * I]].
    """

    A: np.ndarray          # (6, 6)
    B: np.ndarray          # (6, 3)
    Q: np.ndarray          # (6, 6) process-noise covariance
    dt: float
    friction: float
    mass: float


def build_dynamics(dt: float, friction: float, mass: float,
                   q_diag: np.ndarray) -> DynamicsModel:
    if dt <= 0:
        raise ValidationError("dt", f"must be > 0, got {dt}")
    if not 0.0 <= friction <= 1.0:
        raise ValidationError("friction", f"must be in [0, 1], got {friction}")
    if mass <= 0:
        raise ValidationError("mass", f"must be > 0, got {mass}")
    q = np.asarray(q_diag, dtype=float)
    if q.ndim == 1:
        if q.shape != (6,):
            raise ValidationError("q_diag", f"expected 6 entries, got shape {q.shape}")
        if np.any(q < 0):
            raise ValidationError("q_diag", "entries must be >= 0")
        Q = np.diag(q)
    else:
        if q.shape != (6, 6):
            raise ValidationError("q_diag", f"expected (6,) or (6,6), got {q.shape}")
        if not np.allclose(q, q.T, atol=1e-9):
            raise ValidationError("q_diag", "full Q must be symmetric")
        if np.min(np.linalg.eigvalsh((q + q.T) / 2)) < -1e-12:
            raise ValidationError("q_diag", "full Q must be PSD")
        Q = (q + q.T) / 2

    I3 = np.eye(3)
    A = np.block([[I3, dt * I3], [np.zeros((3, 3)), (1.0 - friction) * I3]])
    B = np.vstack([np.zeros((3, 3)), (dt / mass) * I3])
    return DynamicsModel(A=A, B=B, Q=Q, dt=dt, friction=friction, mass=mass)


def propagate_state(model: DynamicsModel, x: np.ndarray, u: np.ndarray,
                    noise: np.ndarray) -> np.ndarray:
    """One step of x' = A x + B u + noise (noise sampled by the caller)."""
    return model.A @ np.asarray(x, float) + model.B @ np.asarray(u, float) \
        + np.asarray(noise, float)


@dataclass(frozen=True)
class Cuboid:
    """Convex box as six outward half-spaces: dot(normals[i], p) <= offsets[i]."""

    normals: np.ndarray    # (6, 3), unit rows
    offsets: np.ndarray    # (6,)

    def __post_init__(self):
        n = np.asarray(self.normals, float)
        b = np.asarray(self.offsets, float)
        if n.shape != (6, 3) or b.shape != (6,):
            raise ValidationError("obstacle", f"bad face shapes {n.shape}, {b.shape}")
        norms = np.linalg.norm(n, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValidationError("obstacle.normals", "face normals must be unit vectors")
        # Boundedness/nonemptiness check: a box has three anti-parallel face
        # pairs, and the centroid must satisfy all six inequalities.
        object.__setattr__(self, "normals", n)
        object.__setattr__(self, "offsets", b)
        centroid = self._centroid()
        if np.any(n @ centroid - b > 1e-6):
            raise ValidationError("obstacle", "face half-spaces have empty intersection")

    def _centroid(self) -> np.ndarray:
        pairs = _opposite_pairs(self.normals)
        c = np.zeros(3)
        for i, j in pairs:
            # midpoint between the two parallel planes, along the normal
            c += self.normals[i] * (self.offsets[i] - self.offsets[j]) / 2.0
        return c

    @staticmethod
    def from_box(center, half_extents) -> "Cuboid":
        """Axis-aligned box expanded to face form."""
        c = np.asarray(center, float)
        h = np.asarray(half_extents, float)
        if np.any(h <= 0):
            raise ValidationError("obstacle.half_extents", "must be > 0")
        normals = np.vstack([np.eye(3), -np.eye(3)])
        offsets = np.concatenate([c + h, -(c - h)])
        return Cuboid(normals=normals, offsets=offsets)


def _opposite_pairs(normals: np.ndarray) -> list[tuple[int, int]]:
    pairs = []
    used = set()
    for i in range(6):
        if i in used:
            continue
        for j in range(i + 1, 6):
            if j not in used and np.allclose(normals[i], -normals[j], atol=1e-9):
                pairs.append((i, j))
                used.update((i, j))
                break
        else:
            raise ValidationError("obstacle.normals",
                                  "faces must come in anti-parallel pairs")
    return pairs


def contains(c: Cuboid, p: np.ndarray) -> bool:
    """True iff p is inside the box (boundary counts as inside)."""
    return bool(np.all(c.normals @ np.asarray(p, float) <= c.offsets))


def face_slack(c: Cuboid, p: np.ndarray, i: int) -> float:
    """dot(normal_i, p) - offset_i; positive means p is outside face i."""
    if not 0 <= i < 6:
        raise IndexError(f"face index {i} out of range [0, 6)")
    return float(c.normals[i] @ np.asarray(p, float) - c.offsets[i])


def all_face_slacks(c: Cuboid, points: np.ndarray) -> np.ndarray:
    """Slacks for a batch of points: shape (len(points), 6)."""
    return np.atleast_2d(points) @ c.normals.T - c.offsets


@dataclass(frozen=True)
class GoalRegion:
    """Axis-aligned ground rectangle; center is the attraction point."""

    center: np.ndarray        # (3,), z = 0
    half_extents: np.ndarray  # (2,)

    def __post_init__(self):
        c = np.asarray(self.center, float)
        h = np.asarray(self.half_extents, float)
        if c.shape != (3,) or abs(c[2]) > 1e-9:
            raise ValidationError("goal.center", "must be a 3-vector with z = 0")
        if h.shape != (2,) or np.any(h <= 0):
            raise ValidationError("goal.half_extents", "must be 2 positive entries")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_extents", h)

    def reached(self, p: np.ndarray) -> bool:
        d = np.abs(np.asarray(p, float)[:2] - self.center[:2])
        return bool(np.all(d <= self.half_extents))
