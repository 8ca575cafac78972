"""Advantage estimation and the clipped-surrogate update."""

import math

import numpy as np
import pytest

from vlajs import policy as pol
from vlajs.ppo import (NonFiniteLossError, PPOConfig, RolloutBatch,
                       _clip_loss_grad, compute_gae, minibatch_loss_and_grads,
                       ppo_clip_loss, ppo_update)


def brute_force_gae(rewards, values, dones, bootstrap, gamma, lam):
    """Literal discounted sum of deltas, cut at episode boundaries."""
    n, t = rewards.shape
    adv = np.zeros((n, t))
    for i in range(n):
        vals = np.concatenate([values[i], [bootstrap[i]]])
        deltas = [rewards[i, k] + gamma * vals[k + 1] * (1.0 - dones[i, k])
                  - vals[k] for k in range(t)]
        for k in range(t):
            acc, w = 0.0, 1.0
            for l in range(k, t):
                acc += w * deltas[l]
                if dones[i, l]:
                    break
                w *= gamma * lam
            adv[i, k] = acc
    return adv


def test_gae_matches_brute_force():
    rng = np.random.default_rng(20)
    for _ in range(10):
        n, t = 3, 12
        rewards = rng.standard_normal((n, t))
        values = rng.standard_normal((n, t))
        dones = (rng.uniform(size=(n, t)) < 0.2).astype(float)
        boot = rng.standard_normal(n)
        gamma, lam = 0.97, 0.9
        adv, ret = compute_gae(rewards, values, dones, boot, gamma, lam,
                               normalize=False)
        want = brute_force_gae(rewards, values, dones, boot, gamma, lam)
        np.testing.assert_allclose(adv, want, atol=1e-10)
        np.testing.assert_allclose(ret, want + values, atol=1e-10)


def test_gae_two_step_example_by_hand():
    rewards = np.array([[1.0, 1.0]])
    values = np.array([[0.5, 0.5]])
    dones = np.array([[0.0, 1.0]])
    adv, ret = compute_gae(rewards, values, dones, np.array([9.9]),
                           gamma=0.5, lam_gae=0.5, normalize=False)
    # delta_2 = 1 - 0.5 = 0.5 (terminal cuts the bootstrap)
    # delta_1 = 1 + 0.5*0.5 - 0.5 = 0.75; A_1 = 0.75 + 0.25*0.5 = 0.875
    np.testing.assert_allclose(adv, [[0.875, 0.5]], atol=1e-12)
    np.testing.assert_allclose(ret, [[1.375, 1.0]], atol=1e-12)


def test_gae_normalization_is_batch_wide():
    rng = np.random.default_rng(21)
    rewards = rng.standard_normal((4, 10))
    values = rng.standard_normal((4, 10))
    dones = np.zeros((4, 10))
    boot = rng.standard_normal(4)
    raw, _ = compute_gae(rewards, values, dones, boot, 0.99, 0.95,
                         normalize=False)
    norm, _ = compute_gae(rewards, values, dones, boot, 0.99, 0.95,
                          normalize=True)
    want = (raw - raw.mean()) / (raw.std() + 1e-8)
    np.testing.assert_allclose(norm, want, atol=1e-12)
    assert abs(norm.mean()) < 1e-10
    assert abs(norm.std() - 1.0) < 1e-6


def test_clip_loss_frozen_examples():
    eps = 0.2
    cases = [
        # (ratio, advantage, expected loss = -min(r*A, clip(r)*A))
        (1.5, 1.0, -1.2),   # clipped above: surrogate 1.2*A
        (0.5, -1.0, 0.8),   # clipped below: surrogate -0.8
        (2.0, -1.0, 2.0),   # unclipped branch attains the min
        (1.0, 0.7, -0.7),   # at ratio 1 nothing clips
    ]
    for r, a, want in cases:
        lp_new = np.array([math.log(r)])
        lp_old = np.zeros(1)
        got = ppo_clip_loss(lp_new, lp_old, np.array([a]), eps)
        assert abs(got - want) < 1e-12, (r, a, got, want)


def test_clip_gradient_flows_only_through_unclipped_branch():
    eps = 0.2
    lp_old = np.zeros(4)
    ratios = np.array([1.5, 0.5, 2.0, 1.0])
    adv = np.array([1.0, -1.0, -1.0, 0.7])
    lp_new = np.log(ratios)
    _, dlp = _clip_loss_grad(lp_new, lp_old, adv, eps)
    # samples 0 and 1 sit on the clipped plateau: zero gradient
    assert dlp[0] == 0.0 and dlp[1] == 0.0
    # samples 2 and 3 are live: d(-r*A/n)/dlp = -r*A/n
    np.testing.assert_allclose(dlp[2], -2.0 * -1.0 / 4.0, atol=1e-12)
    np.testing.assert_allclose(dlp[3], -1.0 * 0.7 / 4.0, atol=1e-12)


def test_clip_gradient_matches_finite_differences():
    rng = np.random.default_rng(22)
    eps = 0.2
    lp_old = rng.standard_normal(32) * 0.1
    lp_new = lp_old + rng.standard_normal(32) * 0.3
    adv = rng.standard_normal(32)
    # keep samples away from the clip kinks so the FD is well defined
    ratio = np.exp(lp_new - lp_old)
    mask = (np.abs(ratio - (1 + eps)) > 1e-2) & (np.abs(ratio - (1 - eps)) > 1e-2)
    lp_new, lp_old, adv = lp_new[mask], lp_old[mask], adv[mask]

    _, dlp = _clip_loss_grad(lp_new, lp_old, adv, eps)
    h = 1e-6
    for i in range(lp_new.size):
        up, dn = lp_new.copy(), lp_new.copy()
        up[i] += h
        dn[i] -= h
        fd = (ppo_clip_loss(up, lp_old, adv, eps)
              - ppo_clip_loss(dn, lp_old, adv, eps)) / (2 * h)
        assert abs(fd - dlp[i]) < 1e-6 * max(1.0, abs(fd))


def _tiny_batch(rng, n=2, h=6):
    obs = rng.standard_normal((n, h, pol.OBS_DIM)) * 0.3
    actions = rng.standard_normal((n, h, 7)) * 0.2
    rewards = rng.standard_normal((n, h))
    dones = np.zeros((n, h))
    dones[:, -1] = 1.0
    params = pol.init_policy(rng)
    mean, log_std, values, _ = pol.forward(params, obs.reshape(-1, pol.OBS_DIM))
    lp = pol.log_prob(mean, log_std, actions.reshape(-1, 7))
    batch = RolloutBatch(
        obs=obs, actions=actions, rewards=rewards, dones=dones,
        log_probs=lp.reshape(n, h), values=values.reshape(n, h),
        bootstrap_values=np.zeros(n),
        targets=np.zeros((n, h, 7)), valid=np.zeros((n, h), dtype=bool))
    return params, batch


def test_minibatch_gradients_match_finite_differences():
    rng = np.random.default_rng(23)
    params, batch = _tiny_batch(rng)
    cfg = PPOConfig()
    n, h = batch.rewards.shape
    obs = batch.obs.reshape(-1, pol.OBS_DIM)
    actions = batch.actions.reshape(-1, 7)
    lp_old = batch.log_probs.reshape(-1) + rng.standard_normal(n * h) * 0.05
    adv = rng.standard_normal(n * h)
    returns = rng.standard_normal(n * h)
    targets = rng.standard_normal((n * h, 7)) * 0.05
    valid = rng.uniform(size=n * h) < 0.5

    for lam_aux, kind in ((0.0, "none"), (0.3, "directional"), (0.3, "mse")):
        loss, _, grads = minibatch_loss_and_grads(
            params, obs, actions, lp_old, adv, returns, targets, valid,
            cfg, lam_aux, kind)
        hstep = 1e-5
        for name in ("w3", "b3", "vw3", "log_std", "w1"):
            tensor = getattr(params, name)
            flat = tensor.reshape(-1)
            idxs = rng.choice(flat.size, size=min(4, flat.size), replace=False)
            for i in idxs:
                orig = flat[i]
                flat[i] = orig + hstep
                up, _, _ = minibatch_loss_and_grads(
                    params, obs, actions, lp_old, adv, returns, targets,
                    valid, cfg, lam_aux, kind)
                flat[i] = orig - hstep
                dn, _, _ = minibatch_loss_and_grads(
                    params, obs, actions, lp_old, adv, returns, targets,
                    valid, cfg, lam_aux, kind)
                flat[i] = orig
                fd = (up - dn) / (2 * hstep)
                an = getattr(grads, name).reshape(-1)[i]
                assert abs(fd - an) <= 1e-4 * max(1.0, abs(fd)), \
                    (kind, name, i, fd, an)


def test_update_is_deterministic_and_ratio_starts_at_one():
    rng = np.random.default_rng(24)
    params, batch = _tiny_batch(rng, n=4, h=8)
    cfg = PPOConfig(epochs=2, minibatches=2)

    out = []
    for _ in range(2):
        p = params.copy()
        opt = pol.OptimizerState(lr=cfg.lr)
        p, opt, diag = ppo_update(p, opt, batch, cfg, 0.0, "none",
                                  np.random.default_rng(99))
        out.append((p, diag))
    p1, d1 = out[0]
    p2, d2 = out[1]
    for n in pol.PARAM_FIELDS:
        np.testing.assert_array_equal(getattr(p1, n), getattr(p2, n))
    assert d1 == d2
    # before any step the importance ratio is exactly one
    assert abs(d1["ratio_mean_first"] - 1.0) < 1e-12


def test_update_with_zero_aux_weight_matches_plain_ppo():
    rng = np.random.default_rng(25)
    params, batch = _tiny_batch(rng, n=4, h=8)
    # identical targets arrays; only the weight/kind differ
    cfg = PPOConfig(epochs=1, minibatches=2)
    pa = params.copy()
    pb = params.copy()
    pa, _, _ = ppo_update(pa, pol.OptimizerState(lr=cfg.lr), batch, cfg,
                          0.0, "directional", np.random.default_rng(5))
    pb, _, _ = ppo_update(pb, pol.OptimizerState(lr=cfg.lr), batch, cfg,
                          0.0, "none", np.random.default_rng(5))
    for n in pol.PARAM_FIELDS:
        np.testing.assert_array_equal(getattr(pa, n), getattr(pb, n))


def test_update_moves_parameters_and_reports_diagnostics():
    rng = np.random.default_rng(26)
    params, batch = _tiny_batch(rng, n=4, h=8)
    cfg = PPOConfig()
    before = params.copy()
    params, _, diag = ppo_update(params, pol.OptimizerState(lr=cfg.lr), batch,
                                 cfg, 0.0, "none", np.random.default_rng(1))
    moved = any(not np.array_equal(getattr(params, n), getattr(before, n))
                for n in pol.PARAM_FIELDS)
    assert moved
    for key in ("loss", "clip_loss", "value_loss", "entropy", "aux_loss",
                "ratio_mean", "ratio_mean_first"):
        assert key in diag and math.isfinite(diag[key])
    assert diag["aux_loss"] == 0.0


def test_update_raises_on_non_finite_loss():
    rng = np.random.default_rng(27)
    params, batch = _tiny_batch(rng, n=2, h=4)
    batch.rewards[0, 0] = 1e308
    batch.rewards[0, 1] = 1e308  # advantage overflow -> non-finite loss
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(NonFiniteLossError):
            ppo_update(params, pol.OptimizerState(), batch, PPOConfig(), 0.0,
                       "none", np.random.default_rng(2))


def test_rollout_batch_validates_shapes():
    n, h = 2, 5
    good = dict(
        obs=np.zeros((n, h, pol.OBS_DIM)), actions=np.zeros((n, h, 7)),
        rewards=np.zeros((n, h)), dones=np.zeros((n, h)),
        log_probs=np.zeros((n, h)), values=np.zeros((n, h)),
        bootstrap_values=np.zeros(n), targets=np.zeros((n, h, 7)),
        valid=np.zeros((n, h), dtype=bool))
    RolloutBatch(**good)
    for key, shape in (("actions", (n, h, 6)), ("values", (n, h + 1)),
                       ("bootstrap_values", (n + 1,)), ("valid", (n, h, 1))):
        bad = dict(good)
        bad[key] = np.zeros(shape, dtype=bad[key].dtype)
        with pytest.raises(ValueError):
            RolloutBatch(**bad)


def test_ppo_config_validation():
    with pytest.raises(ValueError):
        PPOConfig(gamma=0.0)
    with pytest.raises(ValueError):
        PPOConfig(clip_eps=-0.1)
    with pytest.raises(ValueError):
        PPOConfig(epochs=0)
    with pytest.raises(ValueError):
        PPOConfig(minibatches=0)
