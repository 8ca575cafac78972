"""Sparse, transient, directional jump-start guidance.

Everything the teacher contributes to training lives here: where to query it
along a rollout, how one queried delta becomes D per-step targets, the two
auxiliary losses (directional cosine alignment and MSE action matching), the
reward-trend schedule that anneals query rate and loss weight, and the
permanent-deactivation latch. Teacher actions are *never* executed in the
environment; they only shape the loss.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import ActionDelta, discretize_delta

log = logging.getLogger(__name__)

MODES = ("transient", "persistent")
# dims 0:3 = translation, 3:6 = rotation; dim 6 (gripper) is never constrained
_COMPONENTS = ((0, 3), (3, 6))


@dataclass(frozen=True)
class GuidanceConfig:
    n_max: int = 2             # max teacher calls per rollout
    n_min: int = 1
    d_steps: int = 8           # per-step targets per call
    kappa: float = 1.0         # shared decay rate for N_calls and lambda
    lambda_max: float = 0.5
    eps_norm: float = 1e-8     # the epsilon inside the cosine denominator
    min_teacher_norm: float = 1e-6
    history_len: int = 10      # W
    monotonic_window: int = 5  # M
    deactivation_threshold: float = 3.0
    delta_r_cap: float = 3.0   # persistent mode: decay evaluated at min(dr, cap)
    mode: str = "transient"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown guidance mode {self.mode!r}")
        if not 0 <= self.n_min <= self.n_max:
            raise ValueError("need 0 <= n_min <= n_max")
        if self.d_steps < 1:
            raise ValueError("d_steps must be >= 1")
        if self.kappa < 0 or self.lambda_max < 0:
            raise ValueError("kappa and lambda_max must be >= 0")
        if self.history_len < 2 or self.monotonic_window < 2:
            raise ValueError("history_len and monotonic_window must be >= 2")


def validate_budget(cfg: GuidanceConfig, horizon: int) -> None:
    """Guided steps are capped at 20% of the rollout; reject configs over it."""
    if cfg.n_max * cfg.d_steps > 0.2 * horizon:
        raise ValueError(
            f"guidance budget n_max*d_steps = {cfg.n_max * cfg.d_steps} exceeds "
            f"20% of horizon {horizon} (cap {0.2 * horizon:.0f} steps)")


@dataclass
class ScheduleState:
    n_calls: int
    lam: float
    vla_disabled: bool = False
    reward_history: list[float] = field(default_factory=list)

    @staticmethod
    def initial(cfg: GuidanceConfig) -> "ScheduleState":
        return ScheduleState(n_calls=cfg.n_max, lam=cfg.lambda_max)


def delta_r(history: list[float], w: int) -> float:
    """Split-half reward trend: newest ceil(W/2) mean minus oldest floor(W/2)
    mean, clipped at zero. Short histories overlap and read near zero."""
    if len(history) < 2:
        return 0.0
    newest = history[-math.ceil(w / 2):]
    oldest = history[: w // 2]
    return max(0.0, float(np.mean(newest) - np.mean(oldest)))


def update_schedule(state: ScheduleState, cfg: GuidanceConfig) -> ScheduleState:
    """Anneal N_calls and lambda exponentially in the reward trend."""
    if state.vla_disabled:
        state.n_calls = 0
        state.lam = 0.0
        return state
    dr = delta_r(state.reward_history, cfg.history_len)
    if cfg.mode == "persistent":
        dr = min(dr, cfg.delta_r_cap)  # floors N_calls/lambda; never deactivates
    decay = math.exp(-cfg.kappa * dr)
    state.n_calls = max(cfg.n_min, math.floor(cfg.n_max * decay))
    state.lam = cfg.lambda_max * decay
    return state


def check_deactivation(state: ScheduleState, cfg: GuidanceConfig) -> bool:
    """True iff the last M history entries strictly increase and the trend
    exceeds the threshold. The caller latches the flag; it never clears."""
    hist = state.reward_history
    m = cfg.monotonic_window
    if len(hist) < m:
        return False
    tail = hist[-m:]
    if any(b <= a for a, b in zip(tail, tail[1:])):
        return False
    return delta_r(hist, cfg.history_len) > cfg.deactivation_threshold


def push_reward(state: ScheduleState, mean_reward: float, cfg: GuidanceConfig) -> ScheduleState:
    """Append one iteration's mean rollout reward; apply the transient latch."""
    state.reward_history.append(float(mean_reward))
    if len(state.reward_history) > cfg.history_len:
        del state.reward_history[: len(state.reward_history) - cfg.history_len]
    if cfg.mode == "transient" and not state.vla_disabled:
        if check_deactivation(state, cfg):
            state.vla_disabled = True
            state.n_calls = 0
            state.lam = 0.0
    return state


def place_queries(horizon: int, n_calls: int, d_steps: int) -> list[int]:
    """Uniformly spaced window starts floor(i*H/N); non-overlapping given the
    budget cap. Empty when n_calls = 0."""
    if n_calls == 0:
        return []
    if n_calls * d_steps > horizon:
        raise ValueError("query windows would overlap or overrun the horizon")
    return [math.floor(i * horizon / n_calls) for i in range(n_calls)]


def build_guidance_targets(obs: np.ndarray, teacher, query_steps: list[int],
                           d_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Query the teacher at the given steps of a collected rollout and expand
    each returned delta into D per-step targets.

    obs: [n_envs, H, obs_dim] observations as collected (never re-simulated).
    teacher: callable obs_vector -> ActionDelta.
    Returns (targets [n_envs, H, 7], valid [n_envs, H]); a teacher failure
    leaves that window invalid and the rollout proceeds.
    """
    n_envs, h, _ = obs.shape
    targets = np.zeros((n_envs, h, 7))
    valid = np.zeros((n_envs, h), dtype=bool)
    for e in range(n_envs):
        for start in query_steps:
            try:
                delta = teacher(obs[e, start])
            except Exception as exc:  # noqa: BLE001 - teacher is pluggable/remote
                log.warning("teacher query failed at env %d step %d: %s", e, start, exc)
                continue
            steps = discretize_delta(delta, d_steps)
            stop = min(start + d_steps, h)
            for i in range(stop - start):
                targets[e, start + i] = steps[i].as_vector()
                valid[e, start + i] = True
    return targets, valid


# --- auxiliary losses ------------------------------------------------------

def directional_loss(policy_means: np.ndarray, targets: np.ndarray,
                     valid: np.ndarray, eps_norm: float = 1e-8,
                     min_teacher_norm: float = 1e-6) -> float:
    """Mean over valid steps of the summed per-component cosine misalignment
    1 - <x,y>/(|x||y| + eps), for translation and rotation components."""
    loss, _ = directional_loss_grad(policy_means, targets, valid,
                                    eps_norm, min_teacher_norm)
    return loss


def directional_loss_grad(policy_means, targets, valid, eps_norm=1e-8,
                          min_teacher_norm=1e-6) -> tuple[float, np.ndarray]:
    """Loss plus d(loss)/d(policy_means); zero rows at invalid steps."""
    means = np.atleast_2d(np.asarray(policy_means, dtype=float))
    tgts = np.atleast_2d(np.asarray(targets, dtype=float))
    mask = np.asarray(valid, dtype=bool).reshape(-1)
    grad = np.zeros_like(means)
    k = int(mask.sum())
    if k == 0:
        return 0.0, grad
    total = 0.0
    idx = np.nonzero(mask)[0]
    for i in idx:
        for lo, hi in _COMPONENTS:
            y = tgts[i, lo:hi]
            ny = float(np.linalg.norm(y))
            if ny < min_teacher_norm:
                continue  # near-zero teacher component: no direction to match
            x = means[i, lo:hi]
            nx = float(np.linalg.norm(x))
            s = float(np.dot(x, y))
            n = nx * ny + eps_norm
            total += 1.0 - s / n
            xhat = x / nx if nx > 0.0 else np.zeros(3)
            grad[i, lo:hi] = -(y * n - s * ny * xhat) / (n * n)
    return total / k, grad / k


def mse_matching_loss(policy_means: np.ndarray, targets: np.ndarray,
                      valid: np.ndarray) -> float:
    """Mean over valid steps of |mean - target|^2 on dims 0-5."""
    loss, _ = mse_matching_loss_grad(policy_means, targets, valid)
    return loss


def mse_matching_loss_grad(policy_means, targets, valid) -> tuple[float, np.ndarray]:
    means = np.atleast_2d(np.asarray(policy_means, dtype=float))
    tgts = np.atleast_2d(np.asarray(targets, dtype=float))
    mask = np.asarray(valid, dtype=bool).reshape(-1)
    grad = np.zeros_like(means)
    k = int(mask.sum())
    if k == 0:
        return 0.0, grad
    diff = np.zeros_like(means)
    diff[mask, :6] = means[mask, :6] - tgts[mask, :6]
    loss = float(np.sum(diff * diff)) / k
    grad[mask, :6] = 2.0 * diff[mask, :6] / k
    return loss, grad
