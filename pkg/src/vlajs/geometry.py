"""Rotation math for end-effector action deltas.

Conventions used everywhere in this package:
  * quaternions are unit, scalar-first (w, x, y, z), canonical sign w >= 0;
  * rotations cross module boundaries as axis-angle 3-vectors whose norm is
    the rotation angle in radians, strictly below pi;
  * increments are expressed in the base frame and compose on the right:
    q_next = q * q_step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Below this angle slerp falls back to nlerp (sin(angle) too small to divide by).
SLERP_EPS = 1e-6
# Unit-norm tolerance enforced on every constructed quaternion.
NORM_TOL = 1e-9


class DegenerateRotationError(ValueError):
    """Axis-angle magnitude at or beyond pi: the log map is ambiguous there."""


@dataclass(frozen=True)
class Quaternion:
    """Unit quaternion, normalized and sign-canonicalized on construction."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if not math.isfinite(n) or n < NORM_TOL:
            raise ValueError(f"cannot normalize quaternion with norm {n}")
        s = 1.0 / n
        if self.w * s < 0.0:  # canonical sign: w >= 0
            s = -s
        object.__setattr__(self, "w", self.w * s)
        object.__setattr__(self, "x", self.x * s)
        object.__setattr__(self, "y", self.y * s)
        object.__setattr__(self, "z", self.z * s)

    @staticmethod
    def identity() -> "Quaternion":
        return Quaternion(1.0, 0.0, 0.0, 0.0)

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Quaternion(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    # Unit quaternion: inverse == conjugate.
    inverse = conjugate

    def dot(self, other: "Quaternion") -> float:
        return self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z

    def angle_to(self, other: "Quaternion") -> float:
        """Geodesic rotation angle between two orientations, in [0, pi]."""
        d = min(1.0, abs(self.dot(other)))
        return 2.0 * math.acos(d)

    def rotate(self, v: np.ndarray) -> np.ndarray:
        """Rotate a 3-vector by this quaternion."""
        q = np.array([self.x, self.y, self.z])
        t = 2.0 * np.cross(q, np.asarray(v, dtype=float))
        return np.asarray(v, dtype=float) + self.w * t + np.cross(q, t)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])


def quat_from_axis_angle(v: np.ndarray) -> Quaternion:
    """Exponential map: axis-angle 3-vector -> unit quaternion.

    The magnitude of v is the rotation angle and must be < pi; zero maps to
    the identity.
    """
    v = np.asarray(v, dtype=float)
    angle = float(np.linalg.norm(v))
    if not math.isfinite(angle):
        raise ValueError("non-finite axis-angle vector")
    if angle >= math.pi:
        raise DegenerateRotationError(f"rotation angle {angle:.6f} >= pi")
    if angle == 0.0:
        return Quaternion.identity()
    half = 0.5 * angle
    s = math.sin(half) / angle
    return Quaternion(math.cos(half), s * v[0], s * v[1], s * v[2])


def axis_angle_from_quat(q: Quaternion) -> np.ndarray:
    """Log map: unit quaternion -> axis-angle 3-vector with norm < pi."""
    # Canonical sign guarantees w >= 0, so the angle is already in [0, pi].
    sin_half = math.sqrt(q.x**2 + q.y**2 + q.z**2)
    angle = 2.0 * math.atan2(sin_half, q.w)
    if sin_half < 1e-12:
        # Near identity the axis is arbitrary; the first-order expansion
        # angle/sin_half -> 2 keeps the map continuous.
        return 2.0 * np.array([q.x, q.y, q.z])
    return (angle / sin_half) * np.array([q.x, q.y, q.z])


def slerp(q0: Quaternion, q1: Quaternion, t: float) -> Quaternion:
    """Spherical interpolation along the shortest arc, t in [0, 1].

    Falls back to normalized linear interpolation when the arc angle drops
    below SLERP_EPS radians.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"interpolation parameter {t} outside [0, 1]")
    a0 = q0.as_array()
    a1 = q1.as_array()
    d = float(np.dot(a0, a1))
    if d < 0.0:  # shortest arc
        a1 = -a1
        d = -d
    d = min(1.0, d)
    angle = math.acos(d)
    if angle < SLERP_EPS:
        out = (1.0 - t) * a0 + t * a1
    else:
        s = math.sin(angle)
        out = (math.sin((1.0 - t) * angle) / s) * a0 + (math.sin(t * angle) / s) * a1
    return Quaternion(out[0], out[1], out[2], out[3])


@dataclass(frozen=True)
class ActionDelta:
    """One end-effector increment: translation (m), rotation (axis-angle,
    base frame, angle < pi), gripper command in [-1, 1]."""

    dpos: np.ndarray
    drot: np.ndarray
    gripper: float = 0.0

    def __post_init__(self):
        dpos = np.asarray(self.dpos, dtype=float)
        drot = np.asarray(self.drot, dtype=float)
        if dpos.shape != (3,) or drot.shape != (3,):
            raise ValueError("dpos and drot must be 3-vectors")
        if not (np.all(np.isfinite(dpos)) and np.all(np.isfinite(drot))
                and math.isfinite(self.gripper)):
            raise ValueError("non-finite action delta")
        if float(np.linalg.norm(drot)) >= math.pi:
            raise DegenerateRotationError("drot angle >= pi")
        object.__setattr__(self, "dpos", dpos)
        object.__setattr__(self, "drot", drot)

    @staticmethod
    def zero() -> "ActionDelta":
        return ActionDelta(np.zeros(3), np.zeros(3), 0.0)

    def as_vector(self) -> np.ndarray:
        """Flatten to [dpos(3), drot(3), gripper] for array pipelines."""
        return np.concatenate([self.dpos, self.drot, [self.gripper]])

    @staticmethod
    def from_vector(v: np.ndarray) -> "ActionDelta":
        v = np.asarray(v, dtype=float)
        if v.shape != (7,):
            raise ValueError("action vector must have 7 entries")
        return ActionDelta(v[:3].copy(), v[3:6].copy(), float(v[6]))


def discretize_delta(delta: ActionDelta, d: int) -> list[ActionDelta]:
    """Split one delta into d per-step increments that compose back exactly.

    Translation is split linearly; rotation is split along the geodesic so
    that composing the d rotation steps (right-multiplication, base frame)
    recovers the original rotation. The gripper command is copied into every
    step unchanged.
    """
    if d < 1:
        raise ValueError(f"step count must be >= 1, got {d}")
    q_total = quat_from_axis_angle(delta.drot)
    step_pos = delta.dpos / d
    out = []
    prev = Quaternion.identity()
    for i in range(1, d + 1):
        cur = slerp(Quaternion.identity(), q_total, i / d)
        step_rot = axis_angle_from_quat(prev.inverse() * cur)
        out.append(ActionDelta(step_pos.copy(), step_rot, delta.gripper))
        prev = cur
    return out


def compose_deltas(steps: list[ActionDelta]) -> ActionDelta:
    """Fold per-step increments back into a single delta (test helper and
    inverse of discretize_delta up to floating point)."""
    pos = np.zeros(3)
    q = Quaternion.identity()
    grip = 0.0
    for s in steps:
        pos += s.dpos
        q = q * quat_from_axis_angle(s.drot)
        grip = s.gripper
    return ActionDelta(pos, axis_angle_from_quat(q), grip)
