"""Generalized advantage estimation and the clipped-surrogate update.

The update consumes a completed rollout batch, runs `epochs` passes of
seeded-shuffled minibatches, and applies one optimizer step per minibatch on

    L = L_clip + value_coef * L_value - entropy_coef * H + lambda_aux * L_aux

where L_aux is the directional or MSE guidance loss on valid timesteps only.
With lambda_aux = 0 the guidance path is skipped entirely, so the update is
bit-identical to vanilla PPO under the same seeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import policy as pol
from .guidance import directional_loss_grad, mse_matching_loss_grad

AUX_KINDS = ("none", "directional", "mse")


class NonFiniteLossError(RuntimeError):
    """Total loss (or a component) went non-finite; the update is aborted."""


@dataclass(frozen=True)
class PPOConfig:
    gamma: float = 0.99
    lam_gae: float = 0.95
    clip_eps: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    epochs: int = 4
    minibatches: int = 4
    lr: float = 3e-4
    max_grad_norm: float = 0.5
    init_log_std: float = -0.5  # starting exploration scale, pre-squash

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0 and 0.0 < self.lam_gae <= 1.0):
            raise ValueError("gamma and lam_gae must lie in (0, 1]")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")
        if self.epochs < 1 or self.minibatches < 1:
            raise ValueError("epochs and minibatches must be >= 1")
        if not -5.0 <= self.init_log_std <= 2.0:
            raise ValueError("init_log_std must lie in the log-std clamp range")


@dataclass
class RolloutBatch:
    """Fixed-size (n_envs x H) on-policy batch with guidance annotations."""

    obs: np.ndarray        # [N, H, obs_dim]
    actions: np.ndarray    # [N, H, 7]
    rewards: np.ndarray    # [N, H]
    dones: np.ndarray      # [N, H]
    log_probs: np.ndarray  # [N, H]
    values: np.ndarray     # [N, H]
    bootstrap_values: np.ndarray  # [N], V(s_{H+1}) per env
    targets: np.ndarray    # [N, H, 7]; zero rows where not valid
    valid: np.ndarray      # [N, H] bool

    def __post_init__(self):
        n, h = self.rewards.shape
        expect = {
            "obs": (n, h, self.obs.shape[-1]), "actions": (n, h, 7),
            "rewards": (n, h), "dones": (n, h), "log_probs": (n, h),
            "values": (n, h), "bootstrap_values": (n,),
            "targets": (n, h, 7), "valid": (n, h),
        }
        for name, shape in expect.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ValueError(f"{name} has shape {got}, expected {shape}")


def compute_gae(rewards, values, dones, bootstrap_value, gamma: float,
                lam_gae: float, normalize: bool = True
                ) -> tuple[np.ndarray, np.ndarray]:
    """Backward-recursive GAE over [N, T] (or [T]) arrays.

    A_t = delta_t + gamma*lam*(1-done_t)*A_{t+1} with
    delta_t = r_t + gamma*(1-done_t)*V_{t+1} - V_t and V_{T} = bootstrap.
    Returns (advantages, returns); advantages are normalized to mean 0 /
    std 1 across the whole batch unless disabled (std guard 1e-8).
    """
    rewards = np.atleast_2d(np.asarray(rewards, dtype=float))
    values = np.atleast_2d(np.asarray(values, dtype=float))
    dones = np.atleast_2d(np.asarray(dones, dtype=float))
    bootstrap = np.atleast_1d(np.asarray(bootstrap_value, dtype=float))
    if not (rewards.shape == values.shape == dones.shape) \
            or bootstrap.shape != (rewards.shape[0],):
        raise ValueError("misaligned GAE inputs")
    n, t = rewards.shape
    adv = np.zeros((n, t))
    next_value = bootstrap
    next_adv = np.zeros(n)
    for k in range(t - 1, -1, -1):
        not_done = 1.0 - dones[:, k]
        delta = rewards[:, k] + gamma * not_done * next_value - values[:, k]
        next_adv = delta + gamma * lam_gae * not_done * next_adv
        adv[:, k] = next_adv
        next_value = values[:, k]
    returns = adv + values
    if normalize:
        std = float(adv.std())
        adv = (adv - adv.mean()) / max(std, 1e-8)
    return adv, returns


def ppo_clip_loss(log_prob_new, log_prob_old, advantages, clip_eps: float) -> float:
    loss, _ = _clip_loss_grad(log_prob_new, log_prob_old, advantages, clip_eps)
    return loss


def _clip_loss_grad(lp_new, lp_old, adv, clip_eps):
    """-mean(min(r*A, clip(r)*A)) and its gradient w.r.t. lp_new.

    Gradient flows only where the unclipped branch attains the min (ties
    resolve to the unclipped branch; the values are equal there anyway).
    """
    lp_new = np.asarray(lp_new, dtype=float)
    ratio = np.exp(lp_new - np.asarray(lp_old, dtype=float))
    adv = np.asarray(adv, dtype=float)
    s_raw = ratio * adv
    s_clip = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
    per_sample = np.minimum(s_raw, s_clip)
    loss = -float(per_sample.mean())
    unclipped = (s_raw <= s_clip).astype(float)
    dlp = -(ratio * adv * unclipped) / lp_new.size
    return loss, dlp


def minibatch_loss_and_grads(params: pol.PolicyParams, obs, actions, lp_old,
                             adv, returns, targets, valid, cfg: PPOConfig,
                             lam_aux: float, aux_kind: str
                             ) -> tuple[float, dict, pol.PolicyParams]:
    """One minibatch: total loss, per-component diagnostics, exact gradients.

    Kept separate from the update loop so gradient checks can difference the
    returned loss against the returned gradients.
    """
    if aux_kind not in AUX_KINDS:
        raise ValueError(f"unknown aux kind {aux_kind!r}")
    b = obs.shape[0]
    mean, log_std, value, cache = pol.forward(params, obs)
    lp_new = pol.log_prob(mean, log_std, actions)

    clip_loss, dlp = _clip_loss_grad(lp_new, lp_old, adv, cfg.clip_eps)
    dmean_lp, dls_lp = pol.log_prob_grads(mean, log_std, actions)
    dmean = dlp[:, None] * dmean_lp
    dlog_std = (dlp[:, None] * dls_lp).sum(axis=0)

    verr = value - returns
    value_loss = float(np.mean(verr * verr))
    dvalue = cfg.value_coef * 2.0 * verr / b

    ent = pol.entropy(log_std)
    dlog_std = dlog_std - cfg.entropy_coef

    aux_loss = 0.0
    if lam_aux > 0.0 and aux_kind != "none" and valid.any():
        grad_fn = directional_loss_grad if aux_kind == "directional" \
            else mse_matching_loss_grad
        aux_loss, daux = grad_fn(mean, targets, valid)
        dmean = dmean + lam_aux * daux

    total = clip_loss + cfg.value_coef * value_loss \
        - cfg.entropy_coef * ent + lam_aux * aux_loss
    grads = pol.backward(params, cache, dmean, dvalue)
    grads.log_std = dlog_std
    diag = {"loss": total, "clip_loss": clip_loss, "value_loss": value_loss,
            "entropy": ent, "aux_loss": aux_loss,
            "ratio_mean": float(np.exp(lp_new - lp_old).mean())}
    return total, diag, grads


def ppo_update(params: pol.PolicyParams, opt_state: pol.OptimizerState,
               batch: RolloutBatch, cfg: PPOConfig, lam_aux: float,
               aux_kind: str, rng: np.random.Generator
               ) -> tuple[pol.PolicyParams, pol.OptimizerState, dict]:
    """Epochs of seeded-shuffled minibatches; one optimizer step each."""
    if lam_aux < 0:
        raise ValueError("lam_aux must be >= 0")
    adv, returns = compute_gae(batch.rewards, batch.values, batch.dones,
                               batch.bootstrap_values, cfg.gamma, cfg.lam_gae)
    m = batch.rewards.size
    obs = batch.obs.reshape(m, -1)
    actions = batch.actions.reshape(m, 7)
    lp_old = batch.log_probs.reshape(m)
    adv = adv.reshape(m)
    returns = returns.reshape(m)
    targets = batch.targets.reshape(m, 7)
    valid = batch.valid.reshape(m)

    sums: dict[str, float] = {}
    count = 0
    first_ratio = None
    for _ in range(cfg.epochs):
        perm = rng.permutation(m)
        for idx in np.array_split(perm, cfg.minibatches):
            total, diag, grads = minibatch_loss_and_grads(
                params, obs[idx], actions[idx], lp_old[idx], adv[idx],
                returns[idx], targets[idx], valid[idx], cfg, lam_aux, aux_kind)
            if not np.isfinite(total):
                raise NonFiniteLossError(f"non-finite loss components: {diag}")
            if first_ratio is None:
                first_ratio = diag["ratio_mean"]
            grads = pol.clip_grad_norm(grads, cfg.max_grad_norm)
            params, opt_state = pol.optimizer_step(params, grads, opt_state)
            for k, v in diag.items():
                sums[k] = sums.get(k, 0.0) + v
            count += 1
    out = {k: v / count for k, v in sums.items()}
    out["ratio_mean_first"] = first_ratio
    return params, opt_state, out
