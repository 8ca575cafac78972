"""Deterministic kinematic point-gripper manipulation tasks.

Four tasks (reach, push, pick_lift, pick_place), each with dense or
suboptimal reward shaping and an optional long-horizon variant. No contact
physics: grasping is an attachment latch, pushing is penetration resolution.
Everything is seeded and bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import ActionDelta, Quaternion, axis_angle_from_quat, quat_from_axis_angle

# Workspace is the cube [-WORKSPACE_HALF, WORKSPACE_HALF]^3; positions clamp to it.
WORKSPACE_HALF = 0.5
EE_START = np.array([0.0, 0.0, 0.2])
OBJ_Z = 0.02           # table-top object height
GRASP_RADIUS = 0.03    # attach when closing this near the object
GRASP_OFFSET = np.array([0.0, 0.0, -0.02])  # attached object rides here, ee frame
Z_LIFT = 0.15          # pick_lift success height
CONTACT_RADIUS = 0.03  # push: minimum ee-object separation enforced kinematically
PUSH_APPROACH = 0.04   # push: stage-1 point this far behind the object
TEACHER_STEP = 0.04    # scripted-teacher translation step, shared with teachers

TASKS = ("reach", "push", "pick_lift", "pick_place")
REWARD_MODES = ("dense", "suboptimal")

OBS_DIM = 20
# Observation layout: ee_pos 0:3, ee_quat 3:7 (wxyz), gripper 7 (+1 open/-1
# closed), obj_pos 8:11, obj_rel 11:14 (obj-ee), goal_pos 14:17,
# goal_rel 17:20 (goal-obj).


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    reward_mode: str = "dense"
    horizon: int = 100
    action_cap_pos: float = 0.05
    action_cap_rot: float = 0.2
    success_radius: float = 0.02
    seed: int = 0
    long_factor: int = 1  # 10 ** applications of make_long_horizon

    def __post_init__(self):
        if self.task_id not in TASKS:
            raise ValueError(f"unknown task id {self.task_id!r}")
        if self.reward_mode not in REWARD_MODES:
            raise ValueError(f"unknown reward mode {self.reward_mode!r}")
        if self.horizon < 1 or self.action_cap_pos <= 0 or self.action_cap_rot <= 0:
            raise ValueError("horizon must be >= 1 and action caps positive")
        if self.success_radius <= 0:
            raise ValueError("success_radius must be positive")

    @property
    def name(self) -> str:
        """External string id, e.g. 'pick_lift-sparse' or 'reach-dense-long'."""
        mode = "sparse" if self.reward_mode == "suboptimal" else "dense"
        n_long = round(math.log10(self.long_factor)) if self.long_factor > 1 else 0
        return f"{self.task_id}-{mode}" + "-long" * n_long


def make_task(name: str, **overrides) -> TaskSpec:
    """Parse an external task id like 'pick_lift-sparse-long' into a TaskSpec."""
    parts = name.split("-")
    task_id = parts[0]
    rest = parts[1:]
    n_long = 0
    while rest and rest[-1] == "long":
        rest.pop()
        n_long += 1
    if len(rest) != 1 or rest[0] not in ("dense", "sparse"):
        raise ValueError(f"cannot parse task name {name!r}")
    mode = "suboptimal" if rest[0] == "sparse" else "dense"
    spec = TaskSpec(task_id=task_id, reward_mode=mode, **overrides)
    for _ in range(n_long):
        spec = make_long_horizon(spec)
    return spec


def make_long_horizon(spec: TaskSpec) -> TaskSpec:
    """Same physical task, 10x the steps: horizon x10, per-step caps /10."""
    return replace(
        spec,
        horizon=spec.horizon * 10,
        action_cap_pos=spec.action_cap_pos / 10.0,
        action_cap_rot=spec.action_cap_rot / 10.0,
        long_factor=spec.long_factor * 10,
    )


@dataclass(frozen=True)
class EnvState:
    ee_pos: np.ndarray
    ee_quat: Quaternion
    gripper_open: bool
    obj_pos: np.ndarray
    obj_attached: bool
    goal_pos: np.ndarray
    step_count: int
    stages_done: tuple[bool, ...]  # per-episode latches for first-flip bonuses


def _clamp_workspace(p: np.ndarray) -> np.ndarray:
    return np.clip(p, -WORKSPACE_HALF, WORKSPACE_HALF)


def reset(spec: TaskSpec, seed: int) -> tuple[EnvState, np.ndarray]:
    """Sample object/goal uniformly in task-specific regions; fixed ee start."""
    rng = np.random.default_rng(seed)
    task = spec.task_id
    if task == "reach":
        goal = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3),
                         rng.uniform(0.05, 0.30)])
        obj = goal.copy()  # obs object fields mirror the goal; there is no object
    elif task == "push":
        obj = np.array([rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15), OBJ_Z])
        while True:
            goal = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), OBJ_Z])
            if np.linalg.norm(goal - obj) >= 0.10:
                break
    elif task == "pick_lift":
        obj = np.array([rng.uniform(-0.12, 0.12), rng.uniform(-0.12, 0.12), OBJ_Z])
        goal = np.array([obj[0], obj[1], Z_LIFT + 0.05])  # nominal lift target
    elif task == "pick_place":
        obj = np.array([rng.uniform(-0.12, 0.12), rng.uniform(-0.12, 0.12), OBJ_Z])
        while True:
            goal = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3),
                             rng.uniform(0.10, 0.25)])
            if np.linalg.norm(goal[:2] - obj[:2]) >= 0.10:
                break
    else:  # pragma: no cover - TaskSpec validates task ids
        raise ValueError(f"unknown task id {task!r}")
    state = EnvState(
        ee_pos=EE_START.copy(),
        ee_quat=Quaternion.identity(),
        gripper_open=True,
        obj_pos=obj,
        obj_attached=False,
        goal_pos=goal,
        step_count=0,
        stages_done=(False,) * len(_STAGES[task]),
    )
    return state, observe(state, spec)


def observe(state: EnvState, spec: TaskSpec) -> np.ndarray:
    obs = np.empty(OBS_DIM)
    obs[0:3] = state.ee_pos
    obs[3:7] = state.ee_quat.as_array()
    obs[7] = 1.0 if state.gripper_open else -1.0
    obs[8:11] = state.obj_pos
    obs[11:14] = state.obj_pos - state.ee_pos
    obs[14:17] = state.goal_pos
    obs[17:20] = state.goal_pos - state.obj_pos
    return obs


# --- stage predicates and shaping distances -------------------------------
# A task is a fixed sequence of stages. The *active* stage is the first whose
# predicate is currently false; dense shaping pulls on its distance. Latched
# copies (stages_done) drive the one-shot suboptimal bonuses.

def _grasp_point(state: EnvState) -> np.ndarray:
    # ee position at which the attached object would coincide with obj_pos
    return state.obj_pos - GRASP_OFFSET


def _behind_point(state: EnvState) -> np.ndarray:
    to_goal = state.goal_pos - state.obj_pos
    n = np.linalg.norm(to_goal)
    if n < 1e-9:
        return state.obj_pos.copy()
    return state.obj_pos - (PUSH_APPROACH / n) * to_goal


def _stage_flags(state: EnvState, spec: TaskSpec) -> tuple[bool, ...]:
    t = spec.task_id
    if t == "reach":
        return (bool(np.linalg.norm(state.ee_pos - state.goal_pos) < spec.success_radius),)
    if t == "push":
        behind = np.linalg.norm(state.ee_pos - _behind_point(state)) < spec.success_radius
        at_goal = np.linalg.norm(state.obj_pos - state.goal_pos) < spec.success_radius
        return (bool(behind), bool(at_goal))
    if t == "pick_lift":
        lifted = state.obj_attached and state.obj_pos[2] > Z_LIFT
        return (state.obj_attached, bool(lifted))
    if t == "pick_place":
        placed = state.obj_attached and (
            np.linalg.norm(state.obj_pos - state.goal_pos) < spec.success_radius)
        return (state.obj_attached, bool(placed))
    raise ValueError(f"unknown task id {t!r}")


def _stage_distance(state: EnvState, spec: TaskSpec, idx: int) -> float:
    t = spec.task_id
    if t == "reach":
        return float(np.linalg.norm(state.ee_pos - state.goal_pos))
    if t == "push":
        if idx == 0:
            return float(np.linalg.norm(state.ee_pos - _behind_point(state)))
        return float(np.linalg.norm(state.obj_pos - state.goal_pos))
    if t == "pick_lift":
        if idx == 0:
            return float(np.linalg.norm(state.ee_pos - _grasp_point(state)))
        return max(0.0, Z_LIFT - float(state.obj_pos[2]))
    if t == "pick_place":
        if idx == 0:
            return float(np.linalg.norm(state.ee_pos - _grasp_point(state)))
        return float(np.linalg.norm(state.obj_pos - state.goal_pos))
    raise ValueError(f"unknown task id {t!r}")


_STAGES = {"reach": ("at_goal",), "push": ("behind", "at_goal"),
           "pick_lift": ("grasped", "lifted"), "pick_place": ("grasped", "placed")}


def success(state: EnvState, spec: TaskSpec) -> bool:
    return _stage_flags(state, spec)[-1]


def step(state: EnvState, action: ActionDelta, spec: TaskSpec
         ) -> tuple[EnvState, np.ndarray, float, bool, bool]:
    """Advance one step. Returns (next_state, obs, reward, done, success)."""
    v = action.as_vector()
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite action")

    dpos = action.dpos
    n = float(np.linalg.norm(dpos))
    if n > spec.action_cap_pos:
        dpos = dpos * (spec.action_cap_pos / n)
    drot = action.drot
    ang = float(np.linalg.norm(drot))
    if ang > spec.action_cap_rot:
        drot = drot * (spec.action_cap_rot / ang)

    ee_pos = _clamp_workspace(state.ee_pos + dpos)
    ee_quat = state.ee_quat * quat_from_axis_angle(drot)

    closing = action.gripper < 0.0
    gripper_open = not closing
    obj_pos = state.obj_pos
    attached = state.obj_attached

    if spec.task_id in ("pick_lift", "pick_place"):
        # attachment latches only on the open->closed transition
        if closing and state.gripper_open and not attached:
            if np.linalg.norm(ee_pos - obj_pos) < GRASP_RADIUS:
                attached = True
        if not closing and attached:
            # kinematic world, no gravity: a released object keeps its pose
            attached = False
        if attached:
            # tighten the ee bound so the riding object stays in-workspace
            ee_pos = np.clip(ee_pos, -WORKSPACE_HALF - GRASP_OFFSET,
                             WORKSPACE_HALF - np.maximum(GRASP_OFFSET, 0.0))
            obj_pos = ee_pos + GRASP_OFFSET
    elif spec.task_id == "push":
        seg = ee_pos - state.ee_pos  # realized sweep this step, post-clamp
        if _segment_hits(state.ee_pos, seg, obj_pos, CONTACT_RADIUS):
            # Resolve the contact away from the gripper. When the gripper
            # drove past the object this step the endpoint gap points against
            # the motion, and resolving along it would drag the object
            # backward; the sweep direction wins whenever they disagree.
            gap = obj_pos - ee_pos
            d = float(np.linalg.norm(gap))
            if d <= 1e-9 or float(gap @ seg) < 0.0:
                u = _push_dir_fallback(seg)
            else:
                u = gap / d
            obj_pos = ee_pos + CONTACT_RADIUS * u
            obj_pos = np.array([*_clamp_workspace(obj_pos)[:2], OBJ_Z])
    # reach: object fields mirror the goal
    if spec.task_id == "reach":
        obj_pos = state.goal_pos

    nxt = EnvState(
        ee_pos=ee_pos,
        ee_quat=ee_quat,
        gripper_open=gripper_open,
        obj_pos=obj_pos,
        obj_attached=attached,
        goal_pos=state.goal_pos,
        step_count=state.step_count + 1,
        stages_done=state.stages_done,
    )
    flags = _stage_flags(nxt, spec)
    latched = tuple(a or b for a, b in zip(state.stages_done, flags))
    nxt = replace(nxt, stages_done=latched)

    reward = compute_reward(state, nxt, spec)
    succ = flags[-1]
    done = succ or nxt.step_count >= spec.horizon
    return nxt, observe(nxt, spec), reward, done, succ


def _segment_hits(start: np.ndarray, seg: np.ndarray, point: np.ndarray,
                  radius: float) -> bool:
    """Did the sweep [start, start+seg] pass within radius of point?"""
    ss = float(seg @ seg)
    if ss <= 0.0:
        t = 0.0
    else:
        t = min(1.0, max(0.0, float((point - start) @ seg) / ss))
    closest = start + t * seg
    return float(np.linalg.norm(point - closest)) < radius


def _push_dir_fallback(seg: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(seg))
    return seg / n if n > 1e-9 else np.array([1.0, 0.0, 0.0])


def compute_reward(prev: EnvState, nxt: EnvState, spec: TaskSpec) -> float:
    """Dense: 1 - tanh(5*d) on the active stage, +5 success bonus.
    Suboptimal: +1 the first time a stage latches, +5 on success, else 0.
    The success bonus replaces (never stacks with) a same-step stage bonus."""
    flags = _stage_flags(nxt, spec)
    succ = flags[-1]
    if spec.reward_mode == "dense":
        active = next((i for i, f in enumerate(flags) if not f), len(flags))
        d = 0.0 if active == len(flags) else _stage_distance(nxt, spec, active)
        return (1.0 - math.tanh(5.0 * d)) + (5.0 if succ else 0.0)
    if succ:
        return 5.0
    if any(n and not p for p, n in zip(prev.stages_done, nxt.stages_done)):
        return 1.0
    return 0.0


class Env:
    """Single-instance convenience wrapper with auto-seeded episodes."""

    def __init__(self, spec: TaskSpec, seed: int | None = None):
        self.spec = spec
        self._seed_rng = np.random.default_rng(
            np.random.SeedSequence([spec.seed if seed is None else seed, 0x5EED]))
        self.state: EnvState | None = None

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is None:
            seed = int(self._seed_rng.integers(0, 2**63 - 1))
        self.state, obs = reset(self.spec, seed)
        return obs

    def step(self, action: ActionDelta) -> tuple[np.ndarray, float, bool, bool]:
        if self.state is None:
            raise RuntimeError("step() before reset()")
        self.state, obs, reward, done, succ = step(self.state, action, self.spec)
        return obs, reward, done, succ


class VecEnv:
    """N independent instances stepped in lockstep with auto-reset.

    Iteration order over instances is fixed, so a full rollout is a pure
    function of (spec, seed, action sequence).
    """

    def __init__(self, spec: TaskSpec, n_envs: int, seed: int):
        self.spec = spec
        self.n_envs = n_envs
        self.envs = [Env(spec, seed=int(s.generate_state(1)[0]))
                     for s in np.random.SeedSequence([seed, 0xE27]).spawn(n_envs)]

    def reset_all(self) -> np.ndarray:
        return np.stack([e.reset() for e in self.envs])

    def step(self, actions: list[ActionDelta]
             ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Step every instance; auto-reset finished ones. The returned obs is
        the *next policy input* (post-reset where done)."""
        obs = np.empty((self.n_envs, OBS_DIM))
        rewards = np.empty(self.n_envs)
        dones = np.empty(self.n_envs)
        succs = np.empty(self.n_envs)
        for i, (env, act) in enumerate(zip(self.envs, actions)):
            o, r, d, s = env.step(act)
            rewards[i], dones[i], succs[i] = r, float(d), float(s)
            obs[i] = env.reset() if d else o
        return obs, rewards, dones, succs


def action_to_delta(vec: np.ndarray, spec: TaskSpec) -> ActionDelta:
    """Execution boundary: raw policy output -> safe ActionDelta.

    Translation/rotation are pre-clamped to the task caps (so the axis-angle
    invariant |drot| < pi always holds); the gripper head is tanh-squashed
    here and only here.
    """
    dpos = np.asarray(vec[:3], dtype=float)
    n = float(np.linalg.norm(dpos))
    if n > spec.action_cap_pos:
        dpos = dpos * (spec.action_cap_pos / n)
    drot = np.asarray(vec[3:6], dtype=float)
    ang = float(np.linalg.norm(drot))
    if ang > spec.action_cap_rot:
        drot = drot * (spec.action_cap_rot / ang)
    return ActionDelta(dpos, drot, math.tanh(float(vec[6])))
