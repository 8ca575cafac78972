"""Scripted teacher math, re-implemented independently of the training
package. Equivalence with the in-process teacher (to 1e-9 and, for served
responses, byte-exactly) is asserted by the conformance tests; if you touch
any expression here, keep the operation order intact, because both sides
must agree bit-for-bit on IEEE-754 results.

The observation layout is the 20-float state carried by the wire protocol:
gripper position [0:3], orientation quaternion [3:7], gripper open flag [7],
object position [8:11], object-relative vector [11:14], goal position
[14:17], padding [17:20]. Only positions, the flag, and the goal are read.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

STEP = 0.04            # translation magnitude per suggestion
GRASP_OFFSET = np.array([0.0, 0.0, -0.02])   # held object rides here
Z_LIFT = 0.15          # lift success height
LIFT_MARGIN = 0.02
PUSH_APPROACH = 0.04   # stand this far behind the object before pushing
PUSH_ALTITUDE = 0.08   # detour height while repositioning
GRASP_TOL = 0.005
PUSH_TOL = 0.015

OPEN = 1.0
CLOSE = -1.0

# Instruction strings are the wire protocol's task selector.
INSTRUCTION_TASKS = {
    "move the gripper to the goal position": "reach",
    "push the cube to the goal marker": "push",
    "pick up the cube and lift it": "pick_lift",
    "pick up the cube and place it at the goal": "pick_place",
}


@dataclass(frozen=True)
class TeacherPreset:
    """Calibrated degradation applied on top of the scripted delta."""
    noise_angle_deg: float = 0.0
    scale_factor: float = 1.0
    drop_prob: float = 0.0


PRESETS = {
    "oracle": TeacherPreset(),
    "teacher-weak": TeacherPreset(noise_angle_deg=60.0, scale_factor=0.122,
                                  drop_prob=0.15),
    "teacher-best": TeacherPreset(noise_angle_deg=60.0, scale_factor=0.121,
                                  drop_prob=0.10),
}


def _toward(ee, target, gripper):
    gap = target - ee
    dist = float(np.linalg.norm(gap))
    if dist < 1e-12:
        return np.zeros(3), np.zeros(3), gripper
    step = min(dist, STEP)
    return gap * (step / dist), np.zeros(3), gripper


def oracle_delta(state: np.ndarray, task: str):
    """Next suggested (dpos, drot, gripper) for one of the four task stage
    machines. Pure: same state in, same delta out."""
    state = np.asarray(state, dtype=float)
    ee = state[0:3]
    gripper_open = state[7] > 0.0
    obj = state[8:11]
    goal = state[14:17]

    if task == "reach":
        return _toward(ee, goal, OPEN)

    if task == "push":
        to_goal = goal - obj
        dist_goal = float(np.linalg.norm(to_goal))
        if dist_goal < 1e-9:
            return np.zeros(3), np.zeros(3), OPEN
        u = to_goal / dist_goal
        behind = obj - PUSH_APPROACH * u
        if float(np.linalg.norm(ee - behind)) <= PUSH_TOL:
            step = min(dist_goal, STEP)
            return u * step, np.zeros(3), OPEN
        if float(np.linalg.norm(ee[:2] - behind[:2])) > 0.01:
            waypoint = np.array([behind[0], behind[1],
                                 max(PUSH_ALTITUDE, behind[2])])
            return _toward(ee, waypoint, OPEN)
        return _toward(ee, behind, OPEN)

    if task in ("pick_lift", "pick_place"):
        attached = (not gripper_open) and (
            float(np.linalg.norm(obj - (ee + GRASP_OFFSET))) < 1e-9)
        if not attached:
            grasp_point = obj - GRASP_OFFSET
            if float(np.linalg.norm(ee - grasp_point)) > GRASP_TOL:
                return _toward(ee, grasp_point, OPEN)
            if not gripper_open:
                return np.zeros(3), np.zeros(3), OPEN
            return np.zeros(3), np.zeros(3), CLOSE
        if task == "pick_lift":
            target = np.array([ee[0], ee[1],
                               Z_LIFT + LIFT_MARGIN - GRASP_OFFSET[2]])
            return _toward(ee, target, CLOSE)
        return _toward(ee, goal - GRASP_OFFSET, CLOSE)

    raise ValueError(f"unknown task {task!r}")


def _perp_basis(v):
    a = np.zeros(3)
    a[int(np.argmin(np.abs(v)))] = 1.0
    e1 = np.cross(v, a)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(v, e1)
    e2 /= np.linalg.norm(e2)
    return e1, e2


def _rotate_cone(v, max_angle_rad, rng):
    """Tilt v by a uniform angle about a random perpendicular axis. Always
    consumes exactly two draws so streams stay aligned across branches."""
    alpha = rng.uniform(0.0, max_angle_rad)
    phi = rng.uniform(0.0, 2.0 * np.pi)
    n = float(np.linalg.norm(v))
    if n < 1e-12 or max_angle_rad == 0.0:
        return v.copy()
    e1, e2 = _perp_basis(v)
    axis = math.cos(phi) * e1 + math.sin(phi) * e2
    return v * math.cos(alpha) + np.cross(axis, v) * math.sin(alpha)


def perturb(dpos, drot, gripper, preset: TeacherPreset,
            rng: np.random.Generator):
    """Degrade one delta: maybe drop it, tilt both vectors inside the noise
    cone, rescale magnitudes. Draw count per call is fixed."""
    u_drop = rng.uniform()
    max_angle = math.radians(preset.noise_angle_deg)
    dpos = _rotate_cone(dpos, max_angle, rng) * preset.scale_factor
    drot = _rotate_cone(drot, max_angle, rng) * preset.scale_factor
    if u_drop < preset.drop_prob:
        return np.zeros(3), np.zeros(3), gripper
    ang = float(np.linalg.norm(drot))
    if ang >= math.pi:
        drot = drot * ((math.pi - 1e-9) / ang)
    return dpos, drot, gripper
