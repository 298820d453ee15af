"""Configuration schema, file IO, and the deterministic RNG contract.

Every tunable lives in one flat :class:`Config`. Config files are YAML:
either a flat mapping of ``key: value`` pairs, or one level of sections
whose inner keys are merged into the flat namespace. Unset keys keep
their defaults. All randomness in the package flows through
:func:`seeded_rng`; nothing reads ambient entropy.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

# Constraint layout: indices 0..2 are sparse collision costs, 3..5 dense
# risk costs, both ordered (VRU, side vehicle, rear vehicle).
K_CONSTRAINTS = 6
AGENT_CLASSES = ("vru", "side", "rear")

# Stream ids for seeded_rng; each activity owns its stream.
STREAM_INIT = 0
STREAM_ENV = 1
STREAM_POLICY = 2
STREAM_SHUFFLE = 3
STREAM_EVAL_ENV = 4
STREAM_EVAL_POLICY = 5


class ConfigError(ValueError):
    """Raised for unparseable files, unknown keys, or invariant violations."""


@dataclass(frozen=True)
class Config:
    # Priority gating
    alpha: float = 1.0                  # prior temperature
    beta: float = 3.0                   # likelihood sensitivity
    rho: tuple = (0.0, -1.5, -2.0)      # static priority per agent class
    eta: float = 0.01                   # violation scaling inside the evidence term
    prior_epsilon: float = 1e-8         # keeps ln(lambda + eps) finite
    strategy: str = "bap"               # uniform | minmax | bap
    use_prior: bool = True
    use_likelihood: bool = True

    # Lagrangian and safety constraints
    alpha_lambda: float = 0.035
    lambda_init: float = 0.001
    c_dense: float = 5.0
    c_sparse: float = 50.0
    d: tuple = (0.1, 0.1, 0.1, 100.0, 20.0, 20.0)
    tau_ttc: float = 1.5

    # Reward weights
    w_v: float = 3.0
    w_idle: float = 0.5
    w_track: float = 0.1
    w_goal: float = 100.0
    w_collision: float = 100.0
    w_risk: float = 5.0

    # Optimization and network
    total_steps: int = 4_000_000
    steps_per_epoch: int = 200_000
    hidden_width: int = 128
    init_log_std: float = -0.5          # starting action-noise scale
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    policy_lr: float = 3e-4
    value_lr: float = 3e-4
    ent_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    minibatch_size: int = 4000
    update_iters: int = 40
    seed: int = 0

    # Scenario
    v_tgt: float = 8.0
    v_idle: float = 0.5
    d_obs: float = 50.0
    timeout_ticks: int = 800
    vru_activation_dist: float = 25.0
    cut_in_prob: float = 0.5

    # Run plumbing
    checkpoint_every: int = 10
    eval_every: int = 0
    eval_episodes: int = 100
    grad_diag_every: int = 1

    def validate(self) -> None:
        """Raise ConfigError naming the first violated constraint."""
        checks = [
            (self.alpha >= 0, "alpha must be >= 0"),
            (self.beta >= 0, "beta must be >= 0"),
            (self.eta >= 0, "eta must be >= 0"),
            (self.prior_epsilon > 0, "prior_epsilon must be > 0"),
            (self.alpha_lambda > 0, "alpha_lambda must be > 0"),
            (self.lambda_init >= 0, "lambda_init must be >= 0"),
            (len(self.rho) == 3, "rho must have 3 entries (vru, side, rear)"),
            (len(self.d) == K_CONSTRAINTS, f"d must have {K_CONSTRAINTS} entries"),
            (all(dk >= 0 for dk in self.d), "d entries must be >= 0"),
            (self.tau_ttc > 0, "tau_ttc must be > 0"),
            (0 < self.gamma < 1, "gamma must lie in (0, 1)"),
            (0 <= self.gae_lambda <= 1, "gae_lambda must lie in [0, 1]"),
            (0 < self.clip_epsilon < 1, "clip_epsilon must lie in (0, 1)"),
            (self.policy_lr > 0, "policy_lr must be > 0"),
            (self.value_lr > 0, "value_lr must be > 0"),
            (self.ent_coef >= 0, "ent_coef must be >= 0"),
            (self.value_coef >= 0, "value_coef must be >= 0"),
            (self.max_grad_norm > 0, "max_grad_norm must be > 0"),
            (self.total_steps >= 1, "total_steps must be >= 1"),
            (self.steps_per_epoch >= 1, "steps_per_epoch must be >= 1"),
            (self.minibatch_size >= 1, "minibatch_size must be >= 1"),
            (self.update_iters >= 1, "update_iters must be >= 1"),
            (self.hidden_width >= 1, "hidden_width must be >= 1"),
            (-5.0 <= self.init_log_std <= 2.0,
             "init_log_std must lie in [-5, 2]"),
            (self.strategy in ("uniform", "minmax", "bap"),
             "strategy must be one of uniform|minmax|bap"),
            (self.v_tgt > 0, "v_tgt must be > 0"),
            (self.v_idle >= 0, "v_idle must be >= 0"),
            (self.d_obs > 0, "d_obs must be > 0"),
            (self.timeout_ticks >= 1, "timeout_ticks must be >= 1"),
            (self.vru_activation_dist > 0, "vru_activation_dist must be > 0"),
            (0 <= self.cut_in_prob <= 1, "cut_in_prob must lie in [0, 1]"),
            (self.eval_episodes >= 1, "eval_episodes must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["rho"] = list(self.rho)
        out["d"] = list(self.d)
        return out


_FIELDS = {f.name: f for f in dataclasses.fields(Config)}
_TUPLE_FIELDS = {"rho": 3, "d": K_CONSTRAINTS}


def _coerce(key: str, value):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key '{key}'")
    if key in _TUPLE_FIELDS:
        if not isinstance(value, (list, tuple)) or len(value) != _TUPLE_FIELDS[key]:
            raise ConfigError(f"'{key}' must be a list of {_TUPLE_FIELDS[key]} numbers")
        return tuple(float(v) for v in value)
    default = _FIELDS[key].default
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConfigError(f"'{key}' must be a boolean")
    if isinstance(default, int):
        if isinstance(value, bool) or (isinstance(value, float) and value != int(value)):
            raise ConfigError(f"'{key}' must be an integer")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{key}' must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"'{key}' must be a string")
        return value
    return value


def config_from_dict(raw: dict) -> Config:
    """Build and validate a Config from a flat mapping of overrides."""
    kwargs = {}
    for key, value in raw.items():
        kwargs[key] = _coerce(key, value)
    cfg = Config(**kwargs)
    cfg.validate()
    return cfg


def _flatten_file_mapping(doc: dict) -> dict:
    """Merge one optional level of sections into a flat key/value dict."""
    flat: dict = {}
    for key, value in doc.items():
        if isinstance(value, dict):
            for inner_key, inner_value in value.items():
                if inner_key in flat:
                    raise ConfigError(f"duplicate config key '{inner_key}'")
                flat[inner_key] = inner_value
        else:
            if key in flat:
                raise ConfigError(f"duplicate config key '{key}'")
            flat[key] = value
    return flat


def load_config(path: str | Path) -> Config:
    """Load a YAML config file; unset keys take defaults."""
    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must contain a key/value mapping")
    return config_from_dict(_flatten_file_mapping(doc))


def save_config(config: Config, path: str | Path) -> None:
    """Write the full flat key set; save -> load round-trips exactly."""
    Path(path).write_text(
        yaml.safe_dump(config.to_dict(), sort_keys=True, default_flow_style=None)
    )


def apply_overrides(config: Config, assignments: list[str]) -> Config:
    """Apply ``key=value`` overrides (dotted keys index into list fields)."""
    raw = config.to_dict()
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        key, _, text = item.partition("=")
        key = key.strip()
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse override value '{text}': {exc}") from exc
        if "." in key:
            base, _, index = key.partition(".")
            if base not in _TUPLE_FIELDS:
                raise ConfigError(f"unknown config key '{base}'")
            try:
                idx = int(index)
            except ValueError:
                raise ConfigError(f"index '{index}' in override '{item}' is not an integer")
            entries = list(raw[base])
            if not 0 <= idx < len(entries):
                raise ConfigError(f"index {idx} out of range for '{base}'")
            entries[idx] = value
            raw[base] = entries
        else:
            raw[key] = value
    return config_from_dict(raw)


def config_hash(config: Config) -> str:
    """Stable content hash of the full configuration."""
    canonical = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


def seeded_rng(seed: int, stream_id: int) -> np.random.Generator:
    """Deterministic, platform-stable stream for a (seed, stream_id) pair."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.PCG64(seq))
