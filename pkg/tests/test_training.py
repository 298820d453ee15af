"""Rollout buffer, dual ascent, the policy-loss wrapper and the trainer."""

import dataclasses

import numpy as np
import pytest

from crossgate import nets
from crossgate.config import Config, K_CONSTRAINTS
from crossgate.env import OBS_DIM
from crossgate.priority import LagrangeState
from crossgate.training import (RolloutBuffer, Trainer, dual_ascent,
                                evaluate_policy, ppo_policy_loss)


def lag(lam, limits, rho=None):
    lam = np.asarray(lam, dtype=np.float64)
    if rho is None:
        rho = np.zeros_like(lam)
    return LagrangeState(lam=lam, rho=np.asarray(rho, dtype=np.float64),
                         limits=np.asarray(limits, dtype=np.float64))


def small_cfg(**overrides):
    base = dict(total_steps=400, steps_per_epoch=200, timeout_ticks=60,
                ent_coef=0.0)
    base.update(overrides)
    return dataclasses.replace(Config(), **base)


def test_dual_ascent_step():
    st = dual_ascent(lag([0.001], [0.7]), [0.8], 0.035)
    assert st.lam[0] == pytest.approx(0.0045, abs=1e-15)


def test_dual_ascent_projects_to_zero():
    st = dual_ascent(lag([0.001], [0.7]), [0.0], 0.035)
    assert st.lam[0] == 0.0


def test_dual_ascent_unchanged_at_limit():
    st = dual_ascent(lag([0.25], [0.7]), [0.7], 0.035)
    assert st.lam[0] == 0.25


def test_dual_ascent_preserves_rho_and_limits():
    before = lag([0.1, 0.2], [1.0, 2.0], rho=[-1.5, 0.5])
    after = dual_ascent(before, [3.0, 0.0], 0.01)
    assert np.array_equal(after.rho, before.rho)
    assert np.array_equal(after.limits, before.limits)
    assert before.lam[0] == 0.1                    # input untouched


def test_dual_ascent_rejects_bad_alpha():
    with pytest.raises(ValueError, match="alpha_lambda"):
        dual_ascent(lag([0.1], [1.0]), [0.5], 0.0)


def _toy_policy(seed=0, n=8):
    rng = np.random.default_rng(seed)
    params = nets.init_params(5, 6, 3, rng)
    obs = rng.normal(size=(n, 5))
    cache = nets.forward(params, obs)
    log_std = nets.clamped_log_std(params)
    act = cache["mu"] + rng.normal(size=(n, nets.ACTION_DIM)) * np.exp(log_std)
    logp = nets.gaussian_log_prob(cache["mu"], log_std, act)
    return params, obs, act, logp


def test_policy_loss_at_ratio_one():
    params, obs, act, logp = _toy_policy()
    adv = np.random.default_rng(1).normal(size=obs.shape[0])
    loss = ppo_policy_loss(params, obs, act, logp, adv, clip_epsilon=0.2)
    assert loss == pytest.approx(-adv.mean(), abs=1e-12)


def test_policy_loss_clipped_branch():
    params, obs, act, logp = _toy_policy(n=1)
    adv = np.array([2.0])
    # ratio of 1.25 exceeds 1 + epsilon, so the clipped term wins
    loss = ppo_policy_loss(params, obs, act, logp - np.log(1.25), adv,
                           clip_epsilon=0.2)
    assert loss == pytest.approx(-1.2 * 2.0, abs=1e-12)


def test_policy_loss_entropy_bonus():
    params, obs, act, logp = _toy_policy()
    adv = np.zeros(obs.shape[0])
    ent = nets.entropy(nets.clamped_log_std(params))
    loss = ppo_policy_loss(params, obs, act, logp, adv, 0.2, ent_coef=0.01)
    assert loss == pytest.approx(-0.01 * ent, abs=1e-12)


def test_rollout_buffer_hand_check():
    buf = RolloutBuffer(size=4, obs_dim=2, k=1, gamma=0.5, gae_lambda=1.0)
    o = np.zeros(2)
    a = np.zeros(2)
    # episode one: rewards (1, 2), values (0.5, 0.25), true terminal
    buf.store(o, a, a, 0.0, 1.0, [10.0], 0.5, [0.0])
    buf.store(o, a, a, 0.0, 2.0, [0.0], 0.25, [0.0])
    buf.finish_path(0.0, np.zeros(1), True)
    # episode two: rewards (3, 1), values (0.1, 0.2), bootstrap 2.0
    buf.store(o, a, a, 0.0, 3.0, [0.0], 0.1, [0.0])
    buf.store(o, a, a, 0.0, 1.0, [0.0], 0.2, [0.0])
    buf.finish_path(2.0, np.zeros(1), False)
    b = buf.batch()
    want_adv = [1.0 + 0.5 * 2.0 - 0.5,
                2.0 - 0.25,
                3.0 + 0.5 * 1.0 + 0.25 * 2.0 - 0.1,
                1.0 + 0.5 * 2.0 - 0.2]
    np.testing.assert_allclose(b["adv_r"], want_adv, rtol=1e-12)
    np.testing.assert_allclose(b["ret_r"], np.array(want_adv) + b["v_r"],
                               rtol=1e-12)
    # the cost channel runs the same estimator: 10 with zero critic
    assert b["adv_c"][0, 0] == pytest.approx(10.0)
    assert b["adv_c"][1, 0] == 0.0


def test_rollout_buffer_guards():
    buf = RolloutBuffer(size=1, obs_dim=2, k=1, gamma=0.9, gae_lambda=0.95)
    o = np.zeros(2)
    buf.store(o, o, o, 0.0, 0.0, [0.0], 0.0, [0.0])
    with pytest.raises(IndexError, match="full"):
        buf.store(o, o, o, 0.0, 0.0, [0.0], 0.0, [0.0])
    buf2 = RolloutBuffer(size=2, obs_dim=2, k=1, gamma=0.9, gae_lambda=0.95)
    buf2.store(o, o, o, 0.0, 0.0, [0.0], 0.0, [0.0])
    with pytest.raises(RuntimeError, match="finish"):
        buf2.batch()


def test_gated_advantage_reduces_to_normalized_reward_at_zero_lambda():
    tr = Trainer(small_cfg())
    tr.lagrange = lag(np.zeros(K_CONSTRAINTS), tr.lagrange.limits)
    rng = np.random.default_rng(2)
    batch = {"adv_r": rng.normal(size=50) * 3.0,
             "adv_c": rng.normal(size=(50, K_CONSTRAINTS)) * 10.0,
             "cost": rng.uniform(0.0, 2.0, size=(50, K_CONSTRAINTS))}
    w, _ = tr.infer_weights(batch)
    adv = tr.gated_batch_advantage(batch, w)
    want = batch["adv_r"] - batch["adv_r"].mean()
    want = want / (batch["adv_r"].std() + 1e-8)
    np.testing.assert_array_equal(adv, want)


def test_collect_batch_fallback_and_episode_accounting():
    tr = Trainer(small_cfg(steps_per_epoch=120, timeout_ticks=800))
    batch, completed, reasons = tr.collect_batch()
    assert batch["obs"].shape == (120, OBS_DIM)
    assert batch["cost"].shape == (120, K_CONSTRAINTS)
    assert completed == [] and sum(reasons.values()) == 0
    costs, reward = tr.episodic_costs(completed, batch)
    np.testing.assert_allclose(costs, batch["cost"].sum(axis=0))
    assert reward == pytest.approx(batch["reward"].sum())
    assert tr.global_step == 120 and tr._obs is not None


def test_collect_batch_completes_short_episodes():
    tr = Trainer(small_cfg(steps_per_epoch=120, timeout_ticks=40))
    batch, completed, reasons = tr.collect_batch()
    assert reasons["timeout"] == 3 and len(completed) == 3
    assert all(e.length == 40 for e in completed)
    costs, reward = tr.episodic_costs(completed, batch)
    np.testing.assert_allclose(
        costs, np.mean([e.cost for e in completed], axis=0))
    assert reward == pytest.approx(np.mean([e.reward for e in completed]))


def test_trainer_is_deterministic():
    reports = []
    thetas = []
    for _ in range(2):
        tr = Trainer(small_cfg())
        rep, _, _ = tr.train_epoch()
        reports.append(rep.to_dict())
        thetas.append(tr.theta.copy())
    assert np.array_equal(thetas[0], thetas[1])
    assert reports[0] == reports[1]


def test_uniform_equals_pinned_bap():
    cfg_u = small_cfg(strategy="uniform")
    cfg_b = small_cfg(strategy="bap")
    tr_u = Trainer(cfg_u)
    tr_b = Trainer(cfg_b, pin_weights=1.0)
    for _ in range(2):
        tr_u.train_epoch()
        tr_b.train_epoch()
        assert np.array_equal(tr_u.theta, tr_b.theta)
    assert np.array_equal(tr_u.lagrange.lam, tr_b.lagrange.lam)


def test_epoch_report_contents():
    cfg = small_cfg(strategy="uniform")
    tr = Trainer(cfg)
    rep, gate, snap = tr.train_epoch()
    assert snap is None
    assert rep.epoch == 1 and rep.global_step == cfg.steps_per_epoch
    assert rep.strategy == "uniform"
    assert rep.lambda_before == [cfg.lambda_init] * K_CONSTRAINTS
    assert len(rep.lambda_after) == K_CONSTRAINTS
    assert all(l >= 0.0 for l in rep.lambda_after)
    assert rep.w_mean == [1.0] * K_CONSTRAINTS
    assert rep.grad_diag_epoch is None
    rep2, _, snap2 = tr.train_epoch(diagnose=True)
    assert rep2.epoch == 2 and rep2.grad_diag_epoch == 2
    assert snap2 is not None


def test_optimize_flags_non_finite():
    tr = Trainer(small_cfg())
    batch, _, _ = tr.collect_batch()
    w, _ = tr.infer_weights(batch)
    adv = tr.gated_batch_advantage(batch, w)
    tr.params["w1"][0, 0] = np.nan
    with pytest.raises(FloatingPointError, match="non-finite"):
        tr.optimize(batch, adv)


def test_evaluate_policy_cardinality_and_determinism():
    cfg = small_cfg(timeout_ticks=50)
    params = nets.init_params(OBS_DIM, cfg.hidden_width, K_CONSTRAINTS,
                              np.random.default_rng(0))
    a = evaluate_policy(params, cfg, seed=5, n_episodes=6)
    b = evaluate_policy(params, cfg, seed=5, n_episodes=6)
    assert len(a) == len(b) == 6
    for ra, rb in zip(a, b):
        assert ra.terminal == rb.terminal
        assert ra.episode_reward == rb.episode_reward
        assert ra.cost_sums == rb.cost_sums
        assert ra.ticks == rb.ticks and ra.trace is None


def test_evaluate_policy_maneuver_filter_and_traces():
    cfg = small_cfg(timeout_ticks=30)
    params = nets.init_params(OBS_DIM, cfg.hidden_width, K_CONSTRAINTS,
                              np.random.default_rng(0))
    recs = evaluate_policy(params, cfg, seed=9, n_episodes=3,
                           maneuver="left", keep_traces=True)
    assert all(r.maneuver == "left" for r in recs)
    for r in recs:
        assert len(r.trace) == r.ticks + 1
        assert r.trace[0]["action"] is None
        assert r.trace[-1]["terminal"] == r.terminal


def test_evaluate_policy_stochastic_mode_reproducible():
    cfg = small_cfg(timeout_ticks=40)
    params = nets.init_params(OBS_DIM, cfg.hidden_width, K_CONSTRAINTS,
                              np.random.default_rng(3))
    a = evaluate_policy(params, cfg, seed=2, n_episodes=3, deterministic=False)
    b = evaluate_policy(params, cfg, seed=2, n_episodes=3, deterministic=False)
    assert [r.episode_reward for r in a] == [r.episode_reward for r in b]
