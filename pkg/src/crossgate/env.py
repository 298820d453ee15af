"""Deterministic 2D unsignalized-intersection environment.

One ego vehicle approaches a four-way intersection and must finish a
left, right or straight maneuver while three scripted agents apply
pressure: a crossing pedestrian with a latent intent, an adjacent
vehicle that may cut into the ego lane, and a close tail-gater. The
environment is fully deterministic given its RNG stream: all
randomness (maneuver, cut-in decision, pedestrian intent) is drawn
from the generator handed in at construction.

Observations are a fixed 38-dim vector: 4 ego features in path
coordinates, 3 agent slots of 8 features each, and 5 look-ahead
waypoints of 2 features each. Absent or out-of-range agents are
zeroed with their existence flag cleared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import agents as ag
from .config import Config, K_CONSTRAINTS
from .geometry import MANEUVERS, ReferencePath, build_path, wrap_angle
from .risk import collision_probability, disc_contact_time, harm_from_vectors

N_SLOTS = 3
SLOT_CLASSES = ("vru", "side", "rear")
EGO_FEATURES = 4
SLOT_FEATURES = 8
WAYPOINT_OFFSETS = (2.0, 5.0, 10.0, 20.0, 40.0)
OBS_DIM = EGO_FEATURES + N_SLOTS * SLOT_FEATURES + 2 * len(WAYPOINT_OFFSETS)

GOAL_MARGIN = 0.5              # metres short of the path end that count as arrival
GOAL_LATERAL_TOL = 3.5

# feature scales chosen to keep inputs roughly in [-2, 2]
_D_SCALE = 5.0
_D_CLIP = 10.0
_V_SCALE = 10.0
_VLAT_SCALE = 5.0
_RANGE_SCALE = 50.0


@dataclass
class StepOutcome:
    """Everything one transition produces."""
    obs: np.ndarray
    reward: float
    reward_terms: dict
    cost: np.ndarray                  # (K,) sparse first, then dense
    prob: np.ndarray                  # (3,) per-slot collision probability
    harm: np.ndarray                  # (3,) per-slot harm
    ttc: np.ndarray                   # (3,) per-slot time to collision
    terminal: bool
    reason: str | None = None         # "goal" | "collision" | "timeout"
    collision_class: str | None = None
    tick: int = 0


class IntersectionEnv:

    def __init__(self, cfg: Config, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self._paths = {m: build_path(m) for m in MANEUVERS}
        self.path: ReferencePath | None = None
        self.maneuver: str | None = None
        self.tick = 0
        self._terminal = True

    def reset(self, maneuver: str | None = None) -> np.ndarray:
        cfg = self.cfg
        if maneuver is None:
            maneuver = MANEUVERS[min(2, int(self.rng.random() * 3.0))]
        elif maneuver not in MANEUVERS:
            raise ValueError(f"unknown maneuver {maneuver!r}")
        self.maneuver = maneuver
        self.path = self._paths[maneuver]
        x0, y0, h0 = self.path.point_at(0.0)
        # the ego pulls away from rest, as a spawned vehicle would
        self.ego = ag.AgentState("ego", x0, y0, h0, 0.0,
                                 ag.EGO_RADIUS, ag.EGO_MASS)
        self.vru = ag.make_vru(cfg.vru_activation_dist)
        self.side = ag.make_side(self.rng, cfg.cut_in_prob)
        self.side.place(y0)
        self.rear = ag.make_rear(self.path, 0.0, 0.0)
        self.tick = 0
        self._terminal = False
        self._ego_s = 0.0
        self._ego_d = 0.0
        return self.observe()

    def _slot_states(self):
        return (self.vru.state, self.side.state, self.rear.state)

    def step(self, action) -> StepOutcome:
        if self._terminal:
            raise RuntimeError("step() called on a terminal episode; call reset()")
        cfg = self.cfg
        a = np.asarray(action, dtype=np.float64)
        if a.shape != (2,):
            raise ValueError(f"action must have shape (2,), got {a.shape}")
        a_lon = float(min(1.0, max(-1.0, a[0])))
        a_steer = float(min(1.0, max(-1.0, a[1])))

        ag.step_ego(self.ego, a_lon, a_steer)
        s_ego, d_ego = self.path.project(self.ego.x, self.ego.y)
        self._ego_s, self._ego_d = s_ego, d_ego

        self.vru.step(self.ego, self.rng)
        self.side.step(self.ego)
        self.rear.step(s_ego, self.ego.speed)
        self.tick += 1

        prob = np.zeros(N_SLOTS)
        harm = np.zeros(N_SLOTS)
        ttc = np.full(N_SLOTS, math.inf)
        evx, evy = self.ego.velocity()
        for i, st in enumerate(self._slot_states()):
            dist = math.hypot(st.x - self.ego.x, st.y - self.ego.y)
            if dist > cfg.d_obs:
                continue
            avx, avy = st.velocity()
            ttc[i] = disc_contact_time(st.x - self.ego.x, st.y - self.ego.y,
                                       avx - evx, avy - evy,
                                       st.radius + self.ego.radius)
            prob[i] = collision_probability(ttc[i], cfg.tau_ttc) \
                if math.isfinite(ttc[i]) else 0.0
            harm[i] = harm_from_vectors(self.ego.mass, st.mass,
                                        evx, evy, avx, avy)

        collision_class = None
        deepest = 0.0
        for i, st in enumerate(self._slot_states()):
            dist = math.hypot(st.x - self.ego.x, st.y - self.ego.y)
            pen = (st.radius + self.ego.radius) - dist
            if pen > 0.0 and pen > deepest:
                deepest = pen
                collision_class = SLOT_CLASSES[i]

        reason = None
        if collision_class is not None:
            reason = "collision"
        elif s_ego >= self.path.length - GOAL_MARGIN \
                and abs(d_ego) <= GOAL_LATERAL_TOL:
            reason = "goal"
        elif self.tick >= cfg.timeout_ticks:
            reason = "timeout"
        self._terminal = reason is not None

        risk_sum = float(np.dot(prob, harm))
        v = self.ego.speed
        # linear in |v - v_tgt| with no flat region, so overspeeding is
        # penalized and always has a restoring gradient toward v_tgt
        r_eff = cfg.w_v * (1.0 - abs(v - cfg.v_tgt) / cfg.v_tgt)
        if v < cfg.v_idle:
            r_eff -= cfg.w_idle
        # saturate at the same distance the observation clips at, so the
        # penalty never depends on excursions the policy cannot see and
        # off-route returns stay on a learnable scale
        d_pen = min(abs(d_ego), _D_CLIP)
        r_track = -cfg.w_track * d_pen * d_pen
        r_term = 0.0
        if reason == "goal":
            r_term = cfg.w_goal
        elif reason == "collision":
            r_term = -cfg.w_collision
        r_risk = -cfg.w_risk * risk_sum
        reward = r_eff + r_track + r_term + r_risk

        cost = np.zeros(K_CONSTRAINTS)
        if collision_class is not None:
            cost[SLOT_CLASSES.index(collision_class)] = cfg.c_sparse
        for i in range(N_SLOTS):
            cost[N_SLOTS + i] = cfg.c_dense * prob[i] * harm[i]

        return StepOutcome(
            obs=self.observe(),
            reward=reward,
            reward_terms={"efficiency": r_eff, "tracking": r_track,
                          "terminal": r_term, "risk": r_risk},
            cost=cost, prob=prob, harm=harm, ttc=ttc,
            terminal=self._terminal, reason=reason,
            collision_class=collision_class, tick=self.tick)

    def observe(self) -> np.ndarray:
        """Build the 38-dim scaled observation for the current state."""
        cfg = self.cfg
        obs = np.zeros(OBS_DIM)
        s_ego, d_ego = self.path.project(self.ego.x, self.ego.y)
        psi = wrap_angle(self.ego.heading - self.path.heading_at(s_ego))
        ds_ego = self.ego.speed * math.cos(psi)
        dd_ego = self.ego.speed * math.sin(psi)
        obs[0] = min(_D_CLIP, max(-_D_CLIP, d_ego)) / _D_SCALE
        obs[1] = ds_ego / _V_SCALE
        obs[2] = dd_ego / _VLAT_SCALE
        obs[3] = psi / math.pi

        for i, st in enumerate(self._slot_states()):
            base = EGO_FEATURES + i * SLOT_FEATURES
            dist = math.hypot(st.x - self.ego.x, st.y - self.ego.y)
            if dist > cfg.d_obs:
                continue
            sa, da = self.path.project(st.x, st.y)
            th = self.path.heading_at(sa)
            tx, ty = math.cos(th), math.sin(th)
            avx, avy = st.velocity()
            vs_a = avx * tx + avy * ty
            vd_a = -avx * ty + avy * tx
            obs[base] = 1.0
            obs[base + 1 + i] = 1.0
            rel_s = min(_RANGE_SCALE, max(-_RANGE_SCALE, sa - s_ego))
            rel_d = min(_RANGE_SCALE, max(-_RANGE_SCALE, da - d_ego))
            obs[base + 4] = rel_s / _RANGE_SCALE
            obs[base + 5] = rel_d / _RANGE_SCALE
            obs[base + 6] = (vs_a - ds_ego) / _V_SCALE
            obs[base + 7] = (vd_a - dd_ego) / _V_SCALE

        base = EGO_FEATURES + N_SLOTS * SLOT_FEATURES
        for j, off in enumerate(WAYPOINT_OFFSETS):
            sw = min(s_ego + off, self.path.length)
            obs[base + 2 * j] = (sw - s_ego) / _RANGE_SCALE
            obs[base + 2 * j + 1] = \
                wrap_angle(self.path.heading_at(sw) - self.ego.heading) / math.pi
        return obs

    def snapshot(self) -> dict:
        """Compact scene dump for trajectory logging."""
        e = self.ego
        out = {"tick": self.tick, "maneuver": self.maneuver,
               "ego": {"x": e.x, "y": e.y, "heading": e.heading,
                       "speed": e.speed, "accel": e.accel,
                       "s": self._ego_s, "d": self._ego_d},
               "vru_mode": self.vru.mode, "vru_intent": self.vru.intent}
        for name, st in zip(SLOT_CLASSES, self._slot_states()):
            out[name] = {"x": st.x, "y": st.y, "speed": st.speed}
        return out
