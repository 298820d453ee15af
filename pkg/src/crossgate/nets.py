"""Hand-rolled float64 actor-critic network and its exact gradients.

A shared two-layer tanh encoder feeds linear heads: a 2-dim action
mean, a state-independent log-std vector, one reward value and K cost
values. Everything is plain numpy with manual backprop; no autodiff
framework. Parameters live in an ordered dict of arrays with a
canonical flattening used by the optimizer, checkpoints and gradient
diagnostics.

The loss-layer helpers (clipped surrogate, joint value MSE, entropy)
return both the scalar objective and the exact gradients with respect
to the head outputs, so callers compose them and run one backward pass
through the trunk.
"""

from __future__ import annotations

import math

import numpy as np

ACTION_DIM = 2
LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
PARAM_ORDER = ("w1", "b1", "w2", "b2", "w_mu", "b_mu", "log_std",
               "w_vr", "b_vr", "w_vc", "b_vc")

_LOG_2PI = math.log(2.0 * math.pi)


def orthogonal(rng: np.random.Generator, rows: int, cols: int,
               gain: float) -> np.ndarray:
    """Orthogonal matrix init with deterministic column signs."""
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_params(obs_dim: int, hidden: int, k: int,
                rng: np.random.Generator,
                init_log_std: float = 0.0) -> dict:
    """Fresh parameter dict; draws from ``rng`` in a fixed order."""
    params = {
        "w1": orthogonal(rng, obs_dim, hidden, math.sqrt(2.0)),
        "b1": np.zeros(hidden),
        "w2": orthogonal(rng, hidden, hidden, math.sqrt(2.0)),
        "b2": np.zeros(hidden),
        "w_mu": orthogonal(rng, hidden, ACTION_DIM, 0.01),
        "b_mu": np.zeros(ACTION_DIM),
        "log_std": np.full(ACTION_DIM, float(init_log_std)),
        "w_vr": orthogonal(rng, hidden, 1, 1.0)[:, 0],
        "b_vr": np.zeros(1),
        "w_vc": orthogonal(rng, hidden, k, 1.0),
        "b_vc": np.zeros(k),
    }
    return params


def param_shapes(params: dict) -> dict:
    return {name: params[name].shape for name in PARAM_ORDER}


def shapes_for(obs_dim: int, hidden: int, k: int) -> dict:
    """Canonical shapes without building a network."""
    return {"w1": (obs_dim, hidden), "b1": (hidden,),
            "w2": (hidden, hidden), "b2": (hidden,),
            "w_mu": (hidden, ACTION_DIM), "b_mu": (ACTION_DIM,),
            "log_std": (ACTION_DIM,),
            "w_vr": (hidden,), "b_vr": (1,),
            "w_vc": (hidden, k), "b_vc": (k,)}


def param_slices(shapes: dict) -> dict:
    """Name -> (start, stop) ranges inside the canonical flat vector."""
    out = {}
    pos = 0
    for name in PARAM_ORDER:
        n = int(np.prod(shapes[name])) if shapes[name] else 1
        out[name] = (pos, pos + n)
        pos += n
    return out


def flatten(params: dict) -> np.ndarray:
    return np.concatenate([np.ravel(params[name]) for name in PARAM_ORDER])


def unflatten(vec: np.ndarray, shapes: dict) -> dict:
    total = sum(int(np.prod(s)) for s in shapes.values())
    if vec.size != total:
        raise ValueError(f"expected {total} coordinates, got {vec.size}")
    out = {}
    pos = 0
    for name in PARAM_ORDER:
        n = int(np.prod(shapes[name]))
        out[name] = vec[pos:pos + n].reshape(shapes[name]).copy()
        pos += n
    return out


def forward(params: dict, x: np.ndarray) -> dict:
    """Trunk plus all heads; returns a cache reused by backward()."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != params["w1"].shape[0]:
        raise ValueError(
            f"observation dim {x.shape[1]} does not match "
            f"network input dim {params['w1'].shape[0]}")
    h1 = np.tanh(x @ params["w1"] + params["b1"])
    h2 = np.tanh(h1 @ params["w2"] + params["b2"])
    mu = h2 @ params["w_mu"] + params["b_mu"]
    vr = h2 @ params["w_vr"] + params["b_vr"][0]
    vc = h2 @ params["w_vc"] + params["b_vc"]
    return {"x": x, "h1": h1, "h2": h2, "mu": mu, "vr": vr, "vc": vc}


def backward(params: dict, cache: dict, d_mu: np.ndarray,
             d_vr: np.ndarray, d_vc: np.ndarray) -> dict:
    """Exact gradients for trunk and head weights.

    ``d_mu``, ``d_vr``, ``d_vc`` are the loss gradients at the head
    outputs. The log_std gradient is head-local and supplied by the
    caller, so it is returned as zeros here.
    """
    x, h1, h2 = cache["x"], cache["h1"], cache["h2"]
    grads = {}
    grads["w_mu"] = h2.T @ d_mu
    grads["b_mu"] = d_mu.sum(axis=0)
    grads["w_vr"] = h2.T @ d_vr
    grads["b_vr"] = np.array([d_vr.sum()])
    grads["w_vc"] = h2.T @ d_vc
    grads["b_vc"] = d_vc.sum(axis=0)
    d_h2 = d_mu @ params["w_mu"].T + np.outer(d_vr, params["w_vr"]) \
        + d_vc @ params["w_vc"].T
    d_z2 = d_h2 * (1.0 - h2 * h2)
    grads["w2"] = h1.T @ d_z2
    grads["b2"] = d_z2.sum(axis=0)
    d_z1 = (d_z2 @ params["w2"].T) * (1.0 - h1 * h1)
    grads["w1"] = x.T @ d_z1
    grads["b1"] = d_z1.sum(axis=0)
    grads["log_std"] = np.zeros(ACTION_DIM)
    return grads


def clamped_log_std(params: dict) -> np.ndarray:
    return np.clip(params["log_std"], LOG_STD_MIN, LOG_STD_MAX)


def log_std_pass_mask(params: dict) -> np.ndarray:
    """1 where the clamp is inactive and gradients flow, else 0."""
    ls = params["log_std"]
    return ((ls > LOG_STD_MIN) & (ls < LOG_STD_MAX)).astype(np.float64)


def gaussian_log_prob(mu: np.ndarray, log_std: np.ndarray,
                      a: np.ndarray) -> np.ndarray:
    """Diagonal Gaussian log density, summed over action dims."""
    z = (a - mu) / np.exp(log_std)
    per_dim = -0.5 * z * z - log_std - 0.5 * _LOG_2PI
    return per_dim.sum(axis=-1)


def entropy(log_std: np.ndarray) -> float:
    return float(np.sum(log_std + 0.5 * (1.0 + _LOG_2PI)))


def policy_forward(params: dict, obs: np.ndarray):
    """Policy head only: (mean, clamped log-std) for one observation."""
    cache = forward(params, obs)
    return cache["mu"][0], clamped_log_std(params)


def sample_action(params: dict, obs: np.ndarray, rng: np.random.Generator):
    """Draw one action: (clipped action, pre-clip sample, log-prob).

    The log-prob is the Gaussian density of the pre-clip sample; the
    caller stores that sample so importance ratios stay exact.
    """
    mu, log_std = policy_forward(params, obs)
    pre = mu + np.exp(log_std) * rng.standard_normal(ACTION_DIM)
    return np.clip(pre, -1.0, 1.0), pre, float(gaussian_log_prob(mu, log_std, pre))


def log_prob(params: dict, obs: np.ndarray, action_pre_clip) -> float:
    """Density of a pre-clip action under the current policy."""
    mu, log_std = policy_forward(params, obs)
    return float(gaussian_log_prob(mu, log_std,
                                   np.asarray(action_pre_clip, dtype=np.float64)))


def act(params: dict, obs: np.ndarray, rng: np.random.Generator):
    """Sample one action; single trunk pass shared with the critics.

    Returns (clipped action, pre-clip action, log-prob of the pre-clip
    action, reward value, cost values).
    """
    cache = forward(params, obs)
    mu = cache["mu"][0]
    log_std = clamped_log_std(params)
    pre = mu + np.exp(log_std) * rng.standard_normal(ACTION_DIM)
    logp = float(gaussian_log_prob(mu, log_std, pre))
    action = np.clip(pre, -1.0, 1.0)
    return action, pre, logp, float(cache["vr"][0]), cache["vc"][0].copy()


def act_deterministic(params: dict, obs: np.ndarray):
    """Mean action (clipped) plus critic values; used for evaluation."""
    cache = forward(params, obs)
    mu = cache["mu"][0]
    return np.clip(mu, -1.0, 1.0), float(cache["vr"][0]), cache["vc"][0].copy()


def critic_forward(params: dict, obs: np.ndarray):
    """Value heads only: (reward value, K cost values)."""
    cache = forward(params, obs)
    return float(cache["vr"][0]), cache["vc"][0].copy()


def ppo_surrogate(mu, log_std, a_pre, logp_old, adv, clip_eps):
    """Clipped surrogate objective J and its head gradients.

    Returns (J, d_mu, d_log_std, clip_frac) where J is the mean of
    min(ratio * adv, clip(ratio) * adv) and the gradients are of J
    (ascent direction). Callers negate for a loss.
    """
    n = a_pre.shape[0]
    std = np.exp(log_std)
    z = (a_pre - mu) / std
    logp_new = (-0.5 * z * z - log_std - 0.5 * _LOG_2PI).sum(axis=1)
    ratio = np.exp(logp_new - logp_old)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    u1 = ratio * adv
    u2 = clipped * adv
    objective = float(np.minimum(u1, u2).mean())
    # gradient flows through the unclipped branch only where it is the min;
    # where the clipped branch is strictly smaller the ratio sits outside
    # the clip window, so that branch is locally constant
    active = (u1 <= u2).astype(np.float64)
    coeff = active * ratio * adv / n          # dJ/dlogp_new per sample
    d_mu = coeff[:, None] * z / std
    d_log_std = (coeff[:, None] * (z * z - 1.0)).sum(axis=0)
    clip_frac = float(np.mean(np.abs(ratio - 1.0) > clip_eps))
    return objective, d_mu, d_log_std, clip_frac


def value_mse(vr, vc, target_r, target_c):
    """Joint critic loss: reward MSE plus cost MSE averaged over heads."""
    n, k = vc.shape
    err_r = vr - target_r
    err_c = vc - target_c
    loss = float(np.mean(err_r * err_r) + np.mean(np.sum(err_c * err_c, axis=1) / k))
    d_vr = 2.0 * err_r / n
    d_vc = 2.0 * err_c / (n * k)
    return loss, d_vr, d_vc


def surrogate_ascent_grad(params: dict, obs, a_pre, logp_old, adv,
                          clip_eps) -> np.ndarray:
    """Flat gradient of the clipped surrogate for one advantage signal.

    Value-head coordinates are zero; used for per-constraint gradient
    direction diagnostics.
    """
    cache = forward(params, obs)
    log_std = clamped_log_std(params)
    _, d_mu, d_log_std, _ = ppo_surrogate(
        cache["mu"], log_std, a_pre, logp_old, adv, clip_eps)
    n = obs.shape[0]
    zeros_r = np.zeros(n)
    zeros_c = np.zeros((n, params["w_vc"].shape[1]))
    grads = backward(params, cache, d_mu, zeros_r, zeros_c)
    grads["log_std"] = d_log_std * log_std_pass_mask(params)
    return flatten(grads)


class Adam:
    """Standard Adam with bias correction; supports per-coordinate lr."""

    def __init__(self, dim: int, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.t = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self, theta: np.ndarray, grad: np.ndarray, lr) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return theta - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def apply_update(theta: np.ndarray, grad: np.ndarray, opt: Adam,
                 lr) -> np.ndarray:
    """One optimizer step; rejects non-finite gradients by coordinate."""
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        raise FloatingPointError(
            f"non-finite gradient at flat coordinate {int(bad[0])}")
    return opt.step(theta, grad, lr)
