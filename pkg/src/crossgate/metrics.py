"""Episode-level metrics and the gradient-conflict diagnostic.

All metric functions are pure over record lists; order of records
never matters. Collision rate partitions by hazard class, time to
goal is only defined over successes, and average risk is the per-step
mean of accumulated dense cost so values are horizon-independent.

The gradient-conflict snapshot recomputes the policy surrogate
gradient once per advantage signal (reward plus each constraint) and
reports the pairwise cosine matrix; persistently negative pairs mean
the constraints pull the policy in opposing directions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nets
from .config import AGENT_CLASSES

GRADIENT_LABELS = ("reward",) + tuple(f"sparse_{c}" for c in AGENT_CLASSES) \
    + tuple(f"dense_{c}" for c in AGENT_CLASSES)


@dataclass
class EpisodeRecord:
    """Outcome summary of a single evaluation episode."""
    terminal: str                     # "goal" | "collision" | "timeout"
    collision_class: str | None
    maneuver: str
    ticks: int
    duration: float                   # seconds
    mean_speed_kmh: float
    total_dense_cost: float
    episode_reward: float
    cost_sums: list
    avg_jerk: float | None
    trace: list | None = None

    @property
    def success(self) -> bool:
        return self.terminal == "goal"

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out.pop("trace")
        return out


def _require(records):
    if not records:
        raise ValueError("metric requires a nonempty record set")


def collision_rate(records) -> tuple[float, dict]:
    """Percentage of episodes ending in a collision, split by class."""
    _require(records)
    n = len(records)
    by_class = {c: 0 for c in AGENT_CLASSES}
    total = 0
    for r in records:
        if r.terminal == "collision":
            total += 1
            by_class[r.collision_class] += 1
    return 100.0 * total / n, {c: 100.0 * v / n for c, v in by_class.items()}


def avg_risk(records) -> float:
    """Mean over episodes of per-step accumulated dense cost."""
    _require(records)
    return float(np.mean([r.total_dense_cost / r.ticks for r in records]))


def time_to_goal(records) -> float | None:
    """Mean duration of successful episodes; None when there are none."""
    _require(records)
    times = [r.duration for r in records if r.success]
    return float(np.mean(times)) if times else None


def avg_jerk(accel_trace: np.ndarray, dt: float) -> float:
    """Time-averaged magnitude of the acceleration derivative.

    ``accel_trace`` is an (M, 2) sequence of acceleration vectors
    sampled every ``dt``; needs at least 3 samples.
    """
    accel_trace = np.asarray(accel_trace, dtype=np.float64)
    if accel_trace.ndim != 2 or accel_trace.shape[0] < 3:
        raise ValueError("jerk needs at least 3 acceleration samples")
    diffs = np.diff(accel_trace, axis=0)
    total = float(np.linalg.norm(diffs, axis=1).sum())
    return total / ((accel_trace.shape[0] - 1) * dt)


def success_by_maneuver(records) -> dict:
    """Success percentage per maneuver; absent groups map to None."""
    _require(records)
    out = {}
    for m in ("left", "right", "straight"):
        group = [r for r in records if r.maneuver == m]
        out[m] = 100.0 * sum(r.success for r in group) / len(group) \
            if group else None
    return out


def summarize(records) -> dict:
    """Mean and std of the headline metrics over a record set."""
    _require(records)
    risks = [r.total_dense_cost / r.ticks for r in records]
    speeds = [r.mean_speed_kmh for r in records]
    rewards = [r.episode_reward for r in records]
    jerks = [r.avg_jerk for r in records if r.avg_jerk is not None]
    goals = [r.duration for r in records if r.success]
    cr, breakdown = collision_rate(records)

    def ms(vals):
        if not vals:
            return None
        return {"mean": float(np.mean(vals)), "std": float(np.std(vals))}

    return {
        "episodes": len(records),
        "avg_risk": ms(risks),
        "collision_rate_pct": cr,
        "collision_by_class_pct": breakdown,
        "avg_speed_kmh": ms(speeds),
        "time_to_goal_s": ms(goals),
        "avg_jerk": ms(jerks),
        "episode_reward": ms(rewards),
        "success_rate_pct": 100.0 * sum(r.success for r in records) / len(records),
        "success_by_maneuver_pct": success_by_maneuver(records),
    }


@dataclass
class GradientSnapshot:
    """Pairwise gradient geometry for one batch and policy."""
    epoch: int
    labels: tuple
    cosines: np.ndarray               # (K+1, K+1)
    zero_flags: list                  # labels whose gradient vanished

    def pairs(self):
        """Upper-triangle (label_i, label_j, cosine) triples."""
        n = len(self.labels)
        for i in range(n):
            for j in range(i + 1, n):
                yield self.labels[i], self.labels[j], float(self.cosines[i, j])

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "labels": list(self.labels),
                "cosines": self.cosines.tolist(),
                "zero_flags": self.zero_flags}


def gradient_conflict(batch: dict, params: dict, clip_epsilon: float,
                      epoch: int = 0) -> GradientSnapshot:
    """Cosine similarity between per-signal policy gradients.

    Each gradient is the clipped-surrogate ascent gradient with one
    advantage array (reward or one constraint's raw cost advantage)
    substituted in. Zero gradients get cosine 0 rows by convention and
    are flagged.
    """
    signals = [batch["adv_r"]] + [batch["adv_c"][:, k]
                                  for k in range(batch["adv_c"].shape[1])]
    grads = [nets.surrogate_ascent_grad(params, batch["obs"],
                                        batch["act_pre"], batch["logp"],
                                        adv, clip_epsilon)
             for adv in signals]
    n = len(grads)
    norms = [float(np.linalg.norm(g)) for g in grads]
    cos = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if norms[i] == 0.0 or norms[j] == 0.0:
                cos[i, j] = 0.0
            else:
                cos[i, j] = float(np.dot(grads[i], grads[j])
                                  / (norms[i] * norms[j]))
    flags = [GRADIENT_LABELS[i] for i in range(n) if norms[i] == 0.0]
    return GradientSnapshot(epoch=epoch, labels=GRADIENT_LABELS,
                            cosines=cos, zero_flags=flags)
