"""Multi-constraint safe RL with posterior-gated penalties.

A PPO-Lagrangian learner over K=6 safety constraints whose per-step
penalty weights come from a Bayesian posterior over constraint
criticality, trained against a deterministic 2D intersection
simulator with three scripted adversaries. See README.md for the
layout and the CLI entry points.
"""

from .config import Config, ConfigError, K_CONSTRAINTS, seeded_rng
from .env import IntersectionEnv, StepOutcome
from .priority import LagrangeState, bap_advantage, posterior_weights
from .training import Trainer, evaluate_policy

__all__ = [
    "Config", "ConfigError", "K_CONSTRAINTS", "seeded_rng",
    "IntersectionEnv", "StepOutcome", "LagrangeState",
    "bap_advantage", "posterior_weights", "Trainer", "evaluate_policy",
]

__version__ = "0.1.0"
