"""Rollout collection, advantage estimation, gated PPO, dual ascent.

One training epoch runs three phases: collect a fixed number of
transitions under the frozen policy, infer per-step constraint weights
from the pre-update multipliers, then optimize the clipped surrogate
on the gated advantage jointly with the multi-head value regression
and finish with a dual-ascent step on the multipliers.

The trainer is deterministic: environment, policy sampling, parameter
init and minibatch shuffling each own a fixed RNG stream, so a (seed,
config) pair fixes the whole parameter trajectory bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nets
from .agents import DT
from .config import (Config, K_CONSTRAINTS, STREAM_ENV, STREAM_EVAL_ENV,
                     STREAM_EVAL_POLICY, STREAM_INIT, STREAM_POLICY,
                     STREAM_SHUFFLE, seeded_rng)
from .env import OBS_DIM, IntersectionEnv
from .metrics import EpisodeRecord, avg_jerk, gradient_conflict
from .priority import (GateReport, LagrangeState, bap_advantage,
                       strategy_weights)

_REAL_TERMINALS = ("goal", "collision")

# Value heads regress returns divided by this constant. Episode returns
# reach the hundreds, and raw-scale value errors push the value part of
# the joint gradient far past max_grad_norm, which starves the policy
# update after clipping. A fixed reparameterization keeps both parts of
# the gradient on comparable scales; advantages are computed in real
# units by scaling the head outputs back up.
VALUE_SCALE = 100.0


def compute_gae(rewards, values, terminals, gamma: float,
                gae_lambda: float):
    """Generalized advantage estimation over one array of steps.

    ``values`` has one extra trailing entry: the bootstrap value for
    the state after the last step. ``terminals[t] = 1`` marks a true
    episode end at step t, which cuts both the bootstrap and the
    advantage recursion. Returns (advantages, value targets).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    terminals = np.asarray(terminals, dtype=np.float64)
    t_len = rewards.shape[0]
    if values.shape[0] != t_len + 1:
        raise ValueError("values must include a bootstrap entry")
    adv = np.zeros(t_len)
    last = 0.0
    for t in range(t_len - 1, -1, -1):
        nonterm = 1.0 - terminals[t]
        delta = rewards[t] + gamma * values[t + 1] * nonterm - values[t]
        last = delta + gamma * gae_lambda * nonterm * last
        adv[t] = last
    return adv, adv + values[:-1]


class RolloutBuffer:
    """Fixed-size on-policy batch with per-episode advantage finishing."""

    def __init__(self, size: int, obs_dim: int, k: int, gamma: float,
                 gae_lambda: float):
        self.size = size
        self.gamma = gamma
        self.gae_lambda = gae_lambda
        self.obs = np.zeros((size, obs_dim))
        self.act_pre = np.zeros((size, nets.ACTION_DIM))
        self.act_clip = np.zeros((size, nets.ACTION_DIM))
        self.logp = np.zeros(size)
        self.reward = np.zeros(size)
        self.cost = np.zeros((size, k))
        self.v_r = np.zeros(size)
        self.v_c = np.zeros((size, k))
        self.adv_r = np.zeros(size)
        self.ret_r = np.zeros(size)
        self.adv_c = np.zeros((size, k))
        self.ret_c = np.zeros((size, k))
        self.ptr = 0
        self.path_start = 0

    def store(self, obs, act_pre, act_clip, logp, reward, cost, v_r, v_c):
        i = self.ptr
        if i >= self.size:
            raise IndexError("buffer full")
        self.obs[i] = obs
        self.act_pre[i] = act_pre
        self.act_clip[i] = act_clip
        self.logp[i] = logp
        self.reward[i] = reward
        self.cost[i] = cost
        self.v_r[i] = v_r
        self.v_c[i] = v_c
        self.ptr = i + 1

    def finish_path(self, last_v_r: float, last_v_c: np.ndarray,
                    real_terminal: bool):
        """Close the open episode slice and compute its advantages.

        ``last_v_*`` are the bootstrap values for the state after the
        final step; pass zeros for true terminals. A true terminal also
        cuts the recursion explicitly (``real_terminal``).
        """
        sl = slice(self.path_start, self.ptr)
        n = self.ptr - self.path_start
        if n == 0:
            return
        terms = np.zeros(n)
        if real_terminal:
            terms[-1] = 1.0
        vals_r = np.append(self.v_r[sl], last_v_r)
        self.adv_r[sl], self.ret_r[sl] = compute_gae(
            self.reward[sl], vals_r, terms, self.gamma, self.gae_lambda)
        for k in range(self.cost.shape[1]):
            vals_c = np.append(self.v_c[sl, k], last_v_c[k])
            self.adv_c[sl, k], self.ret_c[sl, k] = compute_gae(
                self.cost[sl, k], vals_c, terms, self.gamma, self.gae_lambda)
        self.path_start = self.ptr

    def full(self) -> bool:
        return self.ptr == self.size

    def batch(self) -> dict:
        if self.ptr != self.size or self.path_start != self.size:
            raise RuntimeError("batch requested before buffer was finished")
        return {"obs": self.obs, "act_pre": self.act_pre,
                "act_clip": self.act_clip, "logp": self.logp,
                "reward": self.reward, "cost": self.cost,
                "v_r": self.v_r, "v_c": self.v_c,
                "adv_r": self.adv_r, "ret_r": self.ret_r,
                "adv_c": self.adv_c, "ret_c": self.ret_c}


def dual_ascent(lagrange: LagrangeState, episodic_costs,
                alpha_lambda: float) -> LagrangeState:
    """Multiplier update from mean episodic costs, projected to >= 0."""
    if alpha_lambda <= 0.0:
        raise ValueError("alpha_lambda must be positive")
    costs = np.asarray(episodic_costs, dtype=np.float64)
    lam = np.maximum(0.0, lagrange.lam + alpha_lambda * (costs - lagrange.limits))
    return LagrangeState(lam=lam, rho=lagrange.rho.copy(),
                         limits=lagrange.limits.copy())


def ppo_policy_loss(params: dict, obs, act_pre, logp_old, adv,
                    clip_epsilon: float, ent_coef: float = 0.0) -> float:
    """Clipped-surrogate policy loss, with optional entropy bonus."""
    cache = nets.forward(params, obs)
    log_std = nets.clamped_log_std(params)
    objective, _, _, _ = nets.ppo_surrogate(
        cache["mu"], log_std, act_pre, logp_old, adv, clip_epsilon)
    return -objective - ent_coef * nets.entropy(log_std)


@dataclass
class EpochReport:
    """One line of the metrics log."""
    epoch: int
    global_step: int
    strategy: str
    episodes: int
    terminals: dict
    mean_ep_reward: float
    mean_ep_cost: list
    lambda_before: list
    lambda_after: list
    policy_loss: float
    value_loss: float
    entropy: float
    clip_frac: float
    w_mean: list
    w_max: list
    delta_mean: list
    phi_prior: list
    grad_diag_epoch: int | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class _EpisodeAccum:
    reward: float = 0.0
    cost: np.ndarray = field(default_factory=lambda: np.zeros(K_CONSTRAINTS))
    length: int = 0


class Trainer:
    """Owns the nets, environment, multipliers and all RNG streams."""

    def __init__(self, cfg: Config, pin_weights: float | None = None):
        cfg.validate()
        self.cfg = cfg
        self.pin_weights = pin_weights
        init_rng = seeded_rng(cfg.seed, STREAM_INIT)
        self.params = nets.init_params(OBS_DIM, cfg.hidden_width,
                                       K_CONSTRAINTS, init_rng,
                                       cfg.init_log_std)
        self.shapes = nets.param_shapes(self.params)
        self.slices = nets.param_slices(self.shapes)
        self.theta = nets.flatten(self.params)
        self.adam = nets.Adam(self.theta.size)
        self.lr = self._lr_vector()
        self.lagrange = LagrangeState.from_config(cfg)
        self.env = IntersectionEnv(cfg, seeded_rng(cfg.seed, STREAM_ENV))
        self.policy_rng = seeded_rng(cfg.seed, STREAM_POLICY)
        self.shuffle_rng = seeded_rng(cfg.seed, STREAM_SHUFFLE)
        self.epoch = 0
        self.global_step = 0
        self._obs = None
        self._accum = _EpisodeAccum()

    def _lr_vector(self) -> np.ndarray:
        lr = np.empty(self.theta.size)
        value_heads = ("w_vr", "b_vr", "w_vc", "b_vc")
        for name, (a, b) in self.slices.items():
            lr[a:b] = self.cfg.value_lr if name in value_heads \
                else self.cfg.policy_lr
        return lr

    @property
    def n_epochs(self) -> int:
        return self.cfg.total_steps // self.cfg.steps_per_epoch

    def collect_batch(self) -> tuple[dict, list[_EpisodeAccum], dict]:
        """Phase 1: gather one on-policy batch under the frozen policy.

        Returns the batch arrays, the list of episodes completed inside
        it, and a terminal-reason histogram.
        """
        cfg = self.cfg
        buf = RolloutBuffer(cfg.steps_per_epoch, OBS_DIM, K_CONSTRAINTS,
                            cfg.gamma, cfg.gae_lambda)
        reasons = {"goal": 0, "collision": 0, "timeout": 0}
        completed: list[_EpisodeAccum] = []
        obs = self._obs if self._obs is not None else self.env.reset()
        while not buf.full():
            action, pre, logp, v_r, v_c = nets.act(self.params, obs,
                                                   self.policy_rng)
            out = self.env.step(action)
            buf.store(obs, pre, action, logp, out.reward, out.cost,
                      v_r * VALUE_SCALE, v_c * VALUE_SCALE)
            acc = self._accum
            acc.reward += out.reward
            acc.cost += out.cost
            acc.length += 1
            if out.terminal:
                reasons[out.reason] += 1
                real = out.reason in _REAL_TERMINALS
                if real:
                    buf.finish_path(0.0, np.zeros(K_CONSTRAINTS), True)
                else:
                    v_r_b, v_c_b = nets.critic_forward(self.params, out.obs)
                    buf.finish_path(v_r_b * VALUE_SCALE,
                                    v_c_b * VALUE_SCALE, False)
                completed.append(acc)
                self._accum = _EpisodeAccum()
                obs = self.env.reset()
            else:
                obs = out.obs
        if buf.path_start != buf.ptr:
            v_r_b, v_c_b = nets.critic_forward(self.params, obs)
            buf.finish_path(v_r_b * VALUE_SCALE, v_c_b * VALUE_SCALE, False)
        self._obs = obs
        self.global_step += cfg.steps_per_epoch
        return buf.batch(), completed, reasons

    def episodic_costs(self, completed, batch) -> tuple[np.ndarray, float]:
        """Mean undiscounted episode cost sums and mean episode reward.

        Falls back to the partial sums in the batch when no episode
        completed (possible only when epochs are shorter than the
        horizon).
        """
        if completed:
            costs = np.mean([e.cost for e in completed], axis=0)
            reward = float(np.mean([e.reward for e in completed]))
        else:
            costs = batch["cost"].sum(axis=0)
            reward = float(batch["reward"].sum())
        return costs, reward

    def infer_weights(self, batch) -> tuple[np.ndarray, GateReport]:
        """Phase 2: per-step constraint weights from pre-update state."""
        w, report = strategy_weights(self.cfg, self.lagrange,
                                     batch["cost"], batch["adv_c"])
        if self.pin_weights is not None:
            w = np.full_like(w, self.pin_weights)
        return w, report

    def gated_batch_advantage(self, batch, w) -> np.ndarray:
        """Normalized reward advantage combined with gated penalties."""
        adv_r = batch["adv_r"]
        adv_r = (adv_r - adv_r.mean()) / (adv_r.std() + 1e-8)
        return bap_advantage(adv_r, batch["adv_c"], w, self.lagrange.lam)

    def _minibatch_loss(self, idx, batch, adv):
        cfg = self.cfg
        params = self.params
        cache = nets.forward(params, batch["obs"][idx])
        log_std = nets.clamped_log_std(params)
        objective, d_mu_j, d_ls_j, clip_frac = nets.ppo_surrogate(
            cache["mu"], log_std, batch["act_pre"][idx], batch["logp"][idx],
            adv[idx], cfg.clip_epsilon)
        ent = nets.entropy(log_std)
        v_loss, d_vr, d_vc = nets.value_mse(
            cache["vr"], cache["vc"], batch["ret_r"][idx] / VALUE_SCALE,
            batch["ret_c"][idx] / VALUE_SCALE)
        loss = -objective - cfg.ent_coef * ent + cfg.value_coef * v_loss
        grads = nets.backward(params, cache, -d_mu_j,
                              cfg.value_coef * d_vr, cfg.value_coef * d_vc)
        mask = nets.log_std_pass_mask(params)
        grads["log_std"] = (-d_ls_j - cfg.ent_coef * np.ones(nets.ACTION_DIM)) \
            * mask
        flat = nets.flatten(grads)
        diag = {"policy_loss": -objective, "value_loss": v_loss,
                "entropy": ent, "clip_frac": clip_frac}
        return loss, flat, diag

    def optimize(self, batch, adv) -> dict:
        """Phase 3: minibatched clipped-surrogate + value regression."""
        cfg = self.cfg
        t_len = adv.shape[0]
        mb = min(cfg.minibatch_size, t_len)
        sums = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
                "clip_frac": 0.0}
        count = 0
        for _ in range(cfg.update_iters):
            perm = self.shuffle_rng.permutation(t_len)
            for start in range(0, t_len, mb):
                idx = perm[start:start + mb]
                loss, grad, diag = self._minibatch_loss(idx, batch, adv)
                if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
                    raise FloatingPointError(
                        f"non-finite loss at epoch {self.epoch}, "
                        f"minibatch {count}")
                norm = float(np.linalg.norm(grad))
                if norm > cfg.max_grad_norm:
                    grad = grad * (cfg.max_grad_norm / norm)
                self.theta = nets.apply_update(self.theta, grad, self.adam,
                                               self.lr)
                self.params = nets.unflatten(self.theta, self.shapes)
                for key in sums:
                    sums[key] += diag[key]
                count += 1
        return {key: sums[key] / max(1, count) for key in sums}

    def train_epoch(self, diagnose: bool = False):
        """One full epoch; returns (EpochReport, GateReport, snapshot).

        When ``diagnose`` is set, the per-constraint gradient geometry
        is captured against the policy that collected the batch, before
        any update touches it.
        """
        batch, completed, reasons = self.collect_batch()
        j_costs, mean_reward = self.episodic_costs(completed, batch)
        w, gate = self.infer_weights(batch)
        adv = self.gated_batch_advantage(batch, w)
        snapshot = gradient_conflict(batch, self.params,
                                     self.cfg.clip_epsilon,
                                     epoch=self.epoch + 1) if diagnose else None
        losses = self.optimize(batch, adv)
        lam_before = self.lagrange.lam.copy()
        self.lagrange = dual_ascent(self.lagrange, j_costs, self.cfg.alpha_lambda)
        self.epoch += 1
        report = EpochReport(
            epoch=self.epoch, global_step=self.global_step,
            strategy=self.cfg.strategy, episodes=len(completed),
            terminals=reasons, mean_ep_reward=mean_reward,
            mean_ep_cost=j_costs.tolist(),
            lambda_before=lam_before.tolist(),
            lambda_after=self.lagrange.lam.tolist(),
            policy_loss=losses["policy_loss"],
            value_loss=losses["value_loss"], entropy=losses["entropy"],
            clip_frac=losses["clip_frac"], w_mean=gate.w_mean.tolist(),
            w_max=gate.w_max.tolist(), delta_mean=gate.delta_mean.tolist(),
            phi_prior=gate.phi_prior.tolist(),
            grad_diag_epoch=self.epoch if diagnose else None)
        return report, gate, snapshot

    def restore(self, params: dict, theta: np.ndarray, adam: nets.Adam,
                lagrange: LagrangeState, epoch: int,
                global_step: int) -> None:
        """Adopt checkpointed learner state in place of the fresh one."""
        self.params = params
        self.theta = theta
        self.adam = adam
        self.lagrange = lagrange
        self.epoch = epoch
        self.global_step = global_step
        self._obs = None
        self._accum = _EpisodeAccum()


def evaluate_policy(params: dict, cfg: Config, seed: int, n_episodes: int,
                    deterministic: bool = True, maneuver: str | None = None,
                    keep_traces: bool = False) -> list[EpisodeRecord]:
    """Run evaluation episodes and build one record per episode.

    Actions are the clipped policy mean when deterministic. The
    constraint-gating machinery is never touched here.
    """
    env = IntersectionEnv(cfg, seeded_rng(seed, STREAM_EVAL_ENV))
    rng = seeded_rng(seed, STREAM_EVAL_POLICY)
    records = []
    for _ in range(n_episodes):
        obs = env.reset(maneuver)
        velocities = [env.ego.velocity()]
        reward_sum = 0.0
        cost_sum = np.zeros(K_CONSTRAINTS)
        speed_sum = 0.0
        trace = [dict(env.snapshot(), action=None)] if keep_traces else None
        while True:
            if deterministic:
                action, _, _ = nets.act_deterministic(params, obs)
            else:
                action, _, _, _, _ = nets.act(params, obs, rng)
            out = env.step(action)
            reward_sum += out.reward
            cost_sum += out.cost
            speed_sum += env.ego.speed
            velocities.append(env.ego.velocity())
            if keep_traces:
                row = env.snapshot()
                row.update(
                    action=action.tolist(), reward=out.reward,
                    reward_terms=out.reward_terms, cost=out.cost.tolist(),
                    prob=out.prob.tolist(), harm=out.harm.tolist(),
                    ttc=[t if math.isfinite(t) else None for t in out.ttc],
                    terminal=out.reason)
                trace.append(row)
            obs = out.obs
            if out.terminal:
                break
        ticks = out.tick
        vel = np.asarray(velocities)
        accel = np.diff(vel, axis=0) / DT
        jerk = avg_jerk(accel, DT) if accel.shape[0] >= 3 else None
        dense = float(cost_sum[3:].sum())
        records.append(EpisodeRecord(
            terminal=out.reason, collision_class=out.collision_class,
            maneuver=env.maneuver, ticks=ticks, duration=ticks * DT,
            mean_speed_kmh=speed_sum / ticks * 3.6,
            total_dense_cost=dense, episode_reward=reward_sum,
            cost_sums=cost_sum.tolist(), avg_jerk=jerk,
            trace=trace))
    return records
