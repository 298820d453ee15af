"""Posterior gating of constraint penalties.

Each of the K constraints gets a weight w in (0, 1) per timestep,
interpreted as the posterior probability that the constraint is
critical right now. The log-odds combine a prior built from the
constraint's Lagrange multiplier and a static class offset with
violation evidence from the step itself; a logistic squash turns the
sum into the weight. The gated advantage then discounts each
constraint penalty by its weight and normalizes by the total
multiplier mass.

Two reference strategies share the interface: "uniform" pins every
weight to 1 (plain multi-constraint PPO-Lagrangian) and "minmax"
puts all weight on the single constraint with the largest
multiplier-scaled cost advantage at each step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import AGENT_CLASSES, Config, K_CONSTRAINTS

STRATEGIES = ("uniform", "minmax", "bap")


@dataclass
class LagrangeState:
    """Multipliers plus per-constraint prior offsets and cost limits."""
    lam: np.ndarray                   # (K,) multipliers, >= 0
    rho: np.ndarray                   # (K,) static prior offsets
    limits: np.ndarray                # (K,) cost limits d_k

    @classmethod
    def from_config(cls, cfg: Config) -> "LagrangeState":
        return cls(lam=np.full(K_CONSTRAINTS, cfg.lambda_init),
                   rho=expand_rho(cfg.rho),
                   limits=np.asarray(cfg.d, dtype=np.float64))


def expand_rho(rho_by_class) -> np.ndarray:
    """Repeat the 3 per-class offsets over the sparse and dense banks."""
    r = np.asarray(rho_by_class, dtype=np.float64)
    if r.shape != (len(AGENT_CLASSES),):
        raise ValueError(f"rho must have {len(AGENT_CLASSES)} entries")
    return np.concatenate([r, r])


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def prior_log_odds(lagrange: LagrangeState, alpha: float, epsilon: float,
                   use_prior: bool = True) -> np.ndarray:
    """Prior log-odds of criticality: alpha * ln(lambda + eps) + rho.

    Large multipliers mean the constraint has a history of pressure,
    so its prior rises; rho encodes fixed class asymmetry. With
    ``use_prior`` off the prior is flat at zero log-odds.
    """
    if np.any(lagrange.lam < 0.0):
        raise ValueError("multipliers must be non-negative")
    if not use_prior:
        return np.zeros_like(lagrange.lam)
    return alpha * np.log(lagrange.lam + epsilon) + lagrange.rho


def violation_evidence(cost_step, limit, cost_advantage,
                       eta: float) -> np.ndarray:
    """Evidence that a constraint is under pressure at a step.

    Combines a hinge on the instantaneous cost exceeding its limit
    with the raw cost advantage. Broadcasts over (T, K) arrays.
    """
    cost_step = np.asarray(cost_step, dtype=np.float64)
    limit = np.asarray(limit, dtype=np.float64)
    adv = np.asarray(cost_advantage, dtype=np.float64)
    return eta * np.maximum(0.0, cost_step - limit) + adv


def posterior_weights(phi_prior, delta, beta: float) -> np.ndarray:
    """Squash prior log-odds plus scaled evidence into (0, 1) weights."""
    return sigmoid(beta * np.asarray(delta, dtype=np.float64)
                   + np.asarray(phi_prior, dtype=np.float64))


def bap_advantage(adv_r, adv_c, w, lam) -> np.ndarray:
    """Combine reward and gated constraint advantages.

    adv_r: (T,), adv_c: (T, K), w: (T, K) or (K,), lam: (K,).
    Result is (adv_r - sum_k w_k lam_k adv_c_k) / (1 + sum_j lam_j).
    """
    adv_r = np.asarray(adv_r, dtype=np.float64)
    adv_c = np.asarray(adv_c, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    penalty = (np.asarray(w, dtype=np.float64) * lam * adv_c).sum(axis=-1)
    return (adv_r - penalty) / (1.0 + lam.sum())


@dataclass
class GateReport:
    """Per-epoch diagnostics of the gating stage."""
    strategy: str
    phi_prior: np.ndarray             # (K,)
    delta_mean: np.ndarray            # (K,) batch-mean evidence
    w_mean: np.ndarray                # (K,)
    w_max: np.ndarray                 # (K,)


def strategy_weights(cfg: Config, lagrange: LagrangeState, cost_step,
                     cost_adv) -> tuple[np.ndarray, GateReport]:
    """Per-step constraint weights for the configured strategy.

    ``cost_step`` and ``cost_adv`` are (T, K) matrices of per-step
    costs and raw cost advantages. Returns a (T, K) weight matrix plus
    diagnostics. All weights derive from the multipliers as they stood
    before the policy update.
    """
    cost_adv = np.asarray(cost_adv, dtype=np.float64)
    t, k = cost_adv.shape
    if cfg.strategy == "uniform":
        w = np.ones((t, k))
        phi = np.zeros(k)
        delta = np.zeros((t, k))
    elif cfg.strategy == "minmax":
        scores = lagrange.lam * cost_adv
        w = np.zeros((t, k))
        w[np.arange(t), np.argmax(scores, axis=1)] = 1.0
        phi = np.zeros(k)
        delta = np.zeros((t, k))
    elif cfg.strategy == "bap":
        phi = prior_log_odds(lagrange, cfg.alpha, cfg.prior_epsilon,
                             use_prior=cfg.use_prior)
        delta = violation_evidence(cost_step, lagrange.limits, cost_adv,
                                   cfg.eta)
        beta = cfg.beta if cfg.use_likelihood else 0.0
        w = posterior_weights(phi, delta, beta)
    else:
        raise ValueError(f"unknown strategy {cfg.strategy!r}")
    report = GateReport(strategy=cfg.strategy, phi_prior=phi,
                        delta_mean=delta.mean(axis=0), w_mean=w.mean(axis=0),
                        w_max=w.max(axis=0))
    return w, report
