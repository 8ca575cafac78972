"""Pluggable teacher policies.

A teacher maps one observation to one action delta. Locally that is a
scripted stage-machine oracle, optionally degraded by a calibrated
perturbation (directional noise, magnitude mis-scaling, query drops) to stand
in for imperfect pretrained models. Remote teachers speak newline-delimited
JSON over a stream socket and are interchangeable with local ones.
"""

from __future__ import annotations

import json
import logging
import math
import socket
from dataclasses import dataclass

import numpy as np

from .envs import (GRASP_OFFSET, PUSH_APPROACH, TEACHER_STEP, Z_LIFT, TaskSpec)
from .geometry import ActionDelta

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1

GRIPPER_OPEN = 1.0
GRIPPER_CLOSE = -1.0

# ee must be this close to the grasp point before closing; keeps the
# ee-object distance safely inside the attachment radius.
_GRASP_TOL = 0.005
_PUSH_TOL = 0.015     # close enough to the behind-point to start pushing
_PUSH_ALTITUDE = 0.08  # travel height while repositioning around the object
_LIFT_MARGIN = 0.02

INSTRUCTIONS = {
    "reach": "move the gripper to the goal position",
    "push": "push the cube to the goal marker",
    "pick_lift": "pick up the cube and lift it",
    "pick_place": "pick up the cube and place it at the goal",
}


class TeacherError(RuntimeError):
    """Base class for anything that makes a teacher query unusable."""


class TeacherUnavailableError(TeacherError):
    """Endpoint unreachable or query timed out."""


class ProtocolError(TeacherError):
    """Malformed, mismatched, or invalid wire response."""


@dataclass(frozen=True)
class TeacherSpec:
    kind: str = "oracle"          # oracle | remote
    noise_angle_deg: float = 0.0  # max directional perturbation per query
    scale_factor: float = 1.0     # magnitude multiplier
    drop_prob: float = 0.0        # probability of a degenerate near-zero reply
    seed: int = 0
    endpoint: tuple[str, int] | None = None  # (host, port), remote only
    timeout_ms: float = 1000.0

    def __post_init__(self):
        if self.kind not in ("oracle", "remote"):
            raise ValueError(f"unknown teacher kind {self.kind!r}")
        if not 0.0 <= self.noise_angle_deg <= 180.0:
            raise ValueError("noise_angle_deg must lie in [0, 180]")
        if self.scale_factor <= 0.0:
            raise ValueError("scale_factor must be positive")
        if not 0.0 <= self.drop_prob < 1.0:
            raise ValueError("drop_prob must lie in [0, 1)")


# Calibrated on pick_lift standalone execution (see tests/test_acceptance.py):
# across 5 eval seeds x 100 episodes, teacher-weak lands near 15% success and
# teacher-best near 38%, centered in the 5-20% / 30-50% gates. Both presets
# model a teacher with sound intent but badly under-calibrated magnitudes:
# directions stay inside a 60-degree cone while commands come out ~8x too
# small, so executed standalone the teacher runs out of horizon mid-task.
# Success is then governed by effective speed (scale_factor x (1 - drop_prob))
# against the episode's path length, which is why two near-identical scales
# with different drop rates sit in different bands.
PRESETS = {
    "oracle": TeacherSpec(),
    "teacher-weak": TeacherSpec(noise_angle_deg=60.0, scale_factor=0.122,
                                drop_prob=0.15),
    "teacher-best": TeacherSpec(noise_angle_deg=60.0, scale_factor=0.121,
                                drop_prob=0.10),
}


def _toward(ee: np.ndarray, target: np.ndarray, gripper: float) -> ActionDelta:
    gap = target - ee
    dist = float(np.linalg.norm(gap))
    if dist < 1e-12:
        return ActionDelta(np.zeros(3), np.zeros(3), gripper)
    step = min(dist, TEACHER_STEP)
    return ActionDelta(gap * (step / dist), np.zeros(3), gripper)


def oracle_action(obs: np.ndarray, task: TaskSpec) -> ActionDelta:
    """Scripted stage machine over the 20-D observation; pure and exact.

    Emits a translation of magnitude min(distance-to-subgoal, 0.04 m) toward
    the current subgoal with a per-stage gripper command; rotation is always
    zero (no task in the suite constrains orientation).
    """
    obs = np.asarray(obs, dtype=float)
    ee = obs[0:3]
    gripper_open = obs[7] > 0.0
    obj = obs[8:11]
    goal = obs[14:17]
    t = task.task_id

    if t == "reach":
        return _toward(ee, goal, GRIPPER_OPEN)

    if t == "push":
        to_goal = goal - obj
        dist_goal = float(np.linalg.norm(to_goal))
        if dist_goal < 1e-9:
            return ActionDelta(np.zeros(3), np.zeros(3), GRIPPER_OPEN)
        u = to_goal / dist_goal
        behind = obj - PUSH_APPROACH * u
        if float(np.linalg.norm(ee - behind)) <= _PUSH_TOL:
            # in position: drive through the object toward the goal
            step = min(dist_goal, TEACHER_STEP)
            return ActionDelta(u * step, np.zeros(3), GRIPPER_OPEN)
        if float(np.linalg.norm(ee[:2] - behind[:2])) > 0.01:
            # reposition at altitude so the detour never bumps the object
            waypoint = np.array([behind[0], behind[1],
                                 max(_PUSH_ALTITUDE, behind[2])])
            return _toward(ee, waypoint, GRIPPER_OPEN)
        return _toward(ee, behind, GRIPPER_OPEN)

    if t in ("pick_lift", "pick_place"):
        attached = (not gripper_open) and (
            float(np.linalg.norm(obj - (ee + GRASP_OFFSET))) < 1e-9)
        if not attached:
            grasp_point = obj - GRASP_OFFSET
            if float(np.linalg.norm(ee - grasp_point)) > _GRASP_TOL:
                return _toward(ee, grasp_point, GRIPPER_OPEN)
            if not gripper_open:
                # stuck closed while empty: reopen so the next close latches
                return ActionDelta(np.zeros(3), np.zeros(3), GRIPPER_OPEN)
            return ActionDelta(np.zeros(3), np.zeros(3), GRIPPER_CLOSE)
        if t == "pick_lift":
            target = np.array([ee[0], ee[1],
                               Z_LIFT + _LIFT_MARGIN - GRASP_OFFSET[2]])
            return _toward(ee, target, GRIPPER_CLOSE)
        return _toward(ee, goal - GRASP_OFFSET, GRIPPER_CLOSE)

    raise ValueError(f"unknown task id {t!r}")


def _perp_basis(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal pair spanning the plane perpendicular to v."""
    a = np.zeros(3)
    a[int(np.argmin(np.abs(v)))] = 1.0
    e1 = np.cross(v, a)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(v, e1)
    e2 /= np.linalg.norm(e2)
    return e1, e2


def _rotate_cone(v: np.ndarray, max_angle_rad: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Tilt v by an angle uniform in [0, max] about a random perpendicular
    axis: the deviation angle is exactly the draw, so a 180-degree budget
    averages to zero cosine. Always consumes two draws."""
    alpha = rng.uniform(0.0, max_angle_rad)
    phi = rng.uniform(0.0, 2.0 * np.pi)
    n = float(np.linalg.norm(v))
    if n < 1e-12 or max_angle_rad == 0.0:
        return v.copy()
    e1, e2 = _perp_basis(v)
    axis = math.cos(phi) * e1 + math.sin(phi) * e2
    return v * math.cos(alpha) + np.cross(axis, v) * math.sin(alpha)


def perturb(delta: ActionDelta, spec: TeacherSpec,
            rng: np.random.Generator) -> ActionDelta:
    """Degrade a teacher delta: drop, tilt, rescale. Pure given the stream;
    the draw count per call is fixed so streams stay aligned across branches."""
    u_drop = rng.uniform()
    max_angle = math.radians(spec.noise_angle_deg)
    dpos = _rotate_cone(delta.dpos, max_angle, rng) * spec.scale_factor
    drot = _rotate_cone(delta.drot, max_angle, rng) * spec.scale_factor
    if u_drop < spec.drop_prob:
        return ActionDelta(np.zeros(3), np.zeros(3), delta.gripper)
    ang = float(np.linalg.norm(drot))
    if ang >= math.pi:  # rescaling must not break the axis-angle invariant
        drot = drot * ((math.pi - 1e-9) / ang)
    return ActionDelta(dpos, drot, delta.gripper)


class OracleTeacher:
    """In-process teacher: scripted oracle plus calibrated imperfection."""

    def __init__(self, spec: TeacherSpec, task: TaskSpec, seed: int | None = None):
        self.spec = spec
        self.task = task
        self.rng = np.random.default_rng(
            np.random.SeedSequence([spec.seed if seed is None else seed, 0x7EAC]))
        self.queries = 0

    def __call__(self, obs: np.ndarray) -> ActionDelta:
        self.queries += 1
        return perturb(oracle_action(obs, self.task), self.spec, self.rng)


# --- wire client -----------------------------------------------------------

def _encode_request(req_id: int, instruction: str, state) -> bytes:
    msg = {"v": PROTOCOL_VERSION, "id": req_id, "instruction": instruction,
           "state": [float(x) for x in state], "image": None}
    return (json.dumps(msg, separators=(",", ":"), sort_keys=True) + "\n").encode("utf-8")


def _decode_response(line: bytes, expect_id: int) -> ActionDelta:
    try:
        msg = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        log.error("undecodable teacher response: %r", line)
        raise ProtocolError(f"undecodable response: {e}") from e
    if not isinstance(msg, dict) or msg.get("v") != PROTOCOL_VERSION:
        log.error("teacher protocol version mismatch: %r", line)
        raise ProtocolError(f"bad protocol version in {msg!r}")
    if msg.get("id") != expect_id:
        raise ProtocolError(f"response id {msg.get('id')} != request id {expect_id}")
    if "error" in msg:
        raise TeacherError(f"teacher reported: {msg['error']}")
    try:
        dpos = np.asarray(msg["dpos"], dtype=float)
        drot = np.asarray(msg["drot"], dtype=float)
        gripper = float(msg["gripper"])
    except (KeyError, TypeError, ValueError) as e:
        log.error("malformed teacher response: %r", line)
        raise ProtocolError(f"malformed response fields: {e}") from e
    if dpos.shape != (3,) or drot.shape != (3,):
        raise ProtocolError("dpos/drot must be 3-vectors")
    if not (np.all(np.isfinite(dpos)) and np.all(np.isfinite(drot))
            and math.isfinite(gripper)):
        raise ProtocolError("non-finite response delta")
    if float(np.linalg.norm(drot)) >= math.pi:
        raise ProtocolError("response rotation angle >= pi")
    return ActionDelta(dpos, drot, gripper)


class _LineSocket:
    """Blocking newline-framed reader over one stream socket."""

    def __init__(self, endpoint: tuple[str, int], timeout_s: float):
        try:
            self.sock = socket.create_connection(endpoint, timeout=timeout_s)
        except OSError as e:
            raise TeacherUnavailableError(f"cannot reach {endpoint}: {e}") from e
        self.sock.settimeout(timeout_s)
        self._buf = b""

    def round_trip(self, payload: bytes) -> bytes:
        try:
            self.sock.sendall(payload)
            while b"\n" not in self._buf:
                chunk = self.sock.recv(65536)
                if not chunk:
                    raise TeacherUnavailableError("connection closed by server")
                self._buf += chunk
        except socket.timeout as e:
            raise TeacherUnavailableError("teacher query timed out") from e
        except OSError as e:
            raise TeacherUnavailableError(f"socket failure: {e}") from e
        line, self._buf = self._buf.split(b"\n", 1)
        return line

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


def remote_query(obs, instruction: str, endpoint: tuple[str, int],
                 timeout_ms: float = 1000.0, req_id: int = 0) -> ActionDelta:
    """One request/response round trip on a fresh connection."""
    conn = _LineSocket(endpoint, timeout_ms / 1000.0)
    try:
        line = conn.round_trip(_encode_request(req_id, instruction, obs))
    finally:
        conn.close()
    return _decode_response(line, req_id)


class RemoteTeacher:
    """Wire-protocol teacher with one persistent connection, one in-flight
    request, and monotonically increasing ids."""

    def __init__(self, spec: TeacherSpec, task: TaskSpec):
        if spec.endpoint is None:
            raise ValueError("remote teacher requires an endpoint")
        self.spec = spec
        self.instruction = INSTRUCTIONS[task.task_id]
        self._conn: _LineSocket | None = None
        self._next_id = 0
        self.queries = 0

    def __call__(self, obs: np.ndarray) -> ActionDelta:
        self.queries += 1
        req_id = self._next_id
        self._next_id += 1
        if self._conn is None:
            self._conn = _LineSocket(self.spec.endpoint,
                                     self.spec.timeout_ms / 1000.0)
        try:
            line = self._conn.round_trip(
                _encode_request(req_id, self.instruction, obs))
        except TeacherError:
            self.close()
            raise
        return _decode_response(line, req_id)

    def close(self):
        if self._conn is not None:
            self._conn.close()
            self._conn = None


def make_teacher(spec: TeacherSpec, task: TaskSpec, seed: int | None = None):
    if spec.kind == "remote":
        return RemoteTeacher(spec, task)
    return OracleTeacher(spec, task, seed=seed)
