"""Agent state containers and the scripted traffic controllers.

The ego follows a kinematic bicycle model. Three scripted agents share
the scene: a crossing pedestrian driven by a small intent state
machine, a rear vehicle that tail-gates along the ego's reference path
with a reaction delay, and an adjacent vehicle that may cut into the
ego lane. All stochastic choices are drawn from the environment's
dedicated RNG stream so episodes replay exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import EGO_LANE_X, LANE_WIDTH, ReferencePath

DT = 0.05                      # simulation tick, 20 Hz
WHEELBASE = 2.8
MAX_STEER = math.radians(35.0)
ACCEL_MAX = 3.0                # m/s^2 at action +1
BRAKE_MAX = 6.0                # m/s^2 at action -1

EGO_RADIUS = 1.0
VEHICLE_RADIUS = 1.0
VRU_RADIUS = 0.4
EGO_MASS = 1500.0
VEHICLE_MASS = 1500.0
VRU_MASS = 90.0

# crossing pedestrian: spawns west of the ego lane, walks east across it
VRU_START_X = -9.0
VRU_START_Y = -5.25
VRU_ACCEL = 3.0
VRU_INTENTS = ("rush", "yield", "hesitate")
VRU_INTENT_PROBS = (0.4, 0.3, 0.3)

# rear tail-gater
REAR_START_GAP = 1.0           # target bumper-to-bumper gap, metres
REAR_KP = 1.0
REAR_KV = 1.5
REAR_DELAY_TICKS = 6           # 0.3 s reaction delay on the ego speed

# adjacent-lane vehicle
SIDE_LANE_X = EGO_LANE_X + LANE_WIDTH
SIDE_START_AHEAD = 4.0
SIDE_SPEED = 7.5
SIDE_CUT_SPEED = 6.5           # settles to this after merging
SIDE_LATERAL_SPEED = 1.75      # m/s toward the ego lane during a cut-in
SIDE_DECEL = 1.0
SIDE_MERGE_GAP_MIN = 3.0       # smallest gap a merging driver accepts, metres
SIDE_MERGE_HEADWAY = 1.0       # additional headway per m/s of ego speed


@dataclass
class AgentState:
    """Pose, velocity and footprint of one traffic participant."""
    cls: str                   # "ego", "vru", "side" or "rear"
    x: float
    y: float
    heading: float
    speed: float
    radius: float
    mass: float
    accel: float = 0.0

    def velocity(self) -> tuple[float, float]:
        return (self.speed * math.cos(self.heading),
                self.speed * math.sin(self.heading))


def ego_accel(a_lon: float) -> float:
    """Map the longitudinal action in [-1, 1] to an acceleration.

    Positive commands scale the drive limit, negative ones the brake
    limit, so -1 is a full emergency stop.
    """
    if a_lon >= 0.0:
        return a_lon * ACCEL_MAX
    return a_lon * BRAKE_MAX


def step_ego(ego: AgentState, a_lon: float, a_steer: float) -> None:
    """Advance the ego one tick with bicycle kinematics.

    Position integrates the pre-update speed; the speed update comes
    last and is floored at zero (no reversing).
    """
    acc = ego_accel(a_lon)
    steer = a_steer * MAX_STEER
    ego.x += ego.speed * math.cos(ego.heading) * DT
    ego.y += ego.speed * math.sin(ego.heading) * DT
    ego.heading += ego.speed / WHEELBASE * math.tan(steer) * DT
    ego.speed = max(0.0, ego.speed + acc * DT)
    ego.accel = acc


@dataclass
class VruFsm:
    """Crossing pedestrian with a latent intent.

    Dormant until the ego closes within ``activation_dist``; the intent
    is then sampled exactly once. "rush" walks straight across, "yield"
    never enters the road, "hesitate" waits a sampled pause before
    committing.
    """
    state: AgentState
    activation_dist: float
    mode: str = "dormant"
    intent: str | None = None
    target_speed: float = 0.0
    pause_left: float = 0.0

    def step(self, ego: AgentState, rng: np.random.Generator) -> None:
        if self.mode == "dormant":
            if math.hypot(ego.x - self.state.x, ego.y - self.state.y) \
                    <= self.activation_dist:
                self._activate(rng)
            return
        if self.mode == "yield":
            return
        if self.mode == "hesitate_pausing":
            self.pause_left -= DT
            if self.pause_left <= 0.0:
                self.mode = "hesitate_go"
            return
        # rush or hesitate_go: accelerate east up to the sampled speed
        st = self.state
        st.x += st.speed * DT
        new_speed = min(self.target_speed, st.speed + VRU_ACCEL * DT)
        st.accel = (new_speed - st.speed) / DT
        st.speed = new_speed

    def _activate(self, rng: np.random.Generator) -> None:
        u = rng.random()
        if u < VRU_INTENT_PROBS[0]:
            self.intent = "rush"
        elif u < VRU_INTENT_PROBS[0] + VRU_INTENT_PROBS[1]:
            self.intent = "yield"
        else:
            self.intent = "hesitate"
        # always draw both nuisance parameters to keep the stream layout fixed
        self.target_speed = rng.uniform(5.0, 7.0)
        self.pause_left = rng.uniform(0.5, 1.5)
        if self.intent == "rush":
            self.mode = "rush"
        elif self.intent == "yield":
            self.mode = "yield"
        else:
            self.mode = "hesitate_pausing"


def make_vru(activation_dist: float) -> VruFsm:
    state = AgentState("vru", VRU_START_X, VRU_START_Y, 0.0, 0.0,
                       VRU_RADIUS, VRU_MASS)
    return VruFsm(state=state, activation_dist=activation_dist)


@dataclass
class RearController:
    """Tail-gater that tracks a fixed gap behind the ego along its path.

    Runs in path coordinates and reacts to the ego's speed with a fixed
    delay, so a hard ego brake can close the gap faster than the
    controller recovers.
    """
    path: ReferencePath
    s: float
    speed: float
    state: AgentState = field(init=False)
    _ego_speeds: list[float] = field(init=False)

    def __post_init__(self):
        x, y, h = self.path.point_at(self.s)
        self.state = AgentState("rear", x, y, h, self.speed,
                                VEHICLE_RADIUS, VEHICLE_MASS)
        self._ego_speeds = [self.speed] * REAR_DELAY_TICKS

    def step(self, ego_s: float, ego_speed: float) -> None:
        delayed = self._ego_speeds.pop(0)
        self._ego_speeds.append(ego_speed)
        gap = (ego_s - EGO_RADIUS) - (self.s + VEHICLE_RADIUS)
        acc = REAR_KP * (gap - REAR_START_GAP) + REAR_KV * (delayed - self.speed)
        acc = min(ACCEL_MAX, max(-BRAKE_MAX, acc))
        self.s += self.speed * DT
        self.speed = max(0.0, self.speed + acc * DT)
        st = self.state
        st.x, st.y, st.heading = self.path.point_at(self.s)
        st.speed = self.speed
        st.accel = acc


def make_rear(path: ReferencePath, ego_s: float, ego_speed: float) -> RearController:
    s0 = ego_s - EGO_RADIUS - VEHICLE_RADIUS - REAR_START_GAP
    return RearController(path=path, s=s0, speed=ego_speed)


@dataclass
class SideController:
    """Adjacent vehicle that may merge into the ego lane.

    The cut-in decision and its trigger position are sampled at reset.
    The merge is a constant lateral drift followed by a slowdown, but
    the driver gap-accepts: the drift pauses while the ego is alongside
    or closing without a speed-dependent headway, until the merge is
    past the lane boundary and committed.
    """
    cut_in: bool
    trigger_y: float
    forward_speed: float = SIDE_SPEED
    state: AgentState = field(init=False)

    def __post_init__(self):
        self.state = AgentState("side", SIDE_LANE_X, 0.0, math.pi / 2.0,
                                SIDE_SPEED, VEHICLE_RADIUS, VEHICLE_MASS)

    def place(self, ego_y: float) -> None:
        self.state.y = ego_y + SIDE_START_AHEAD

    def step(self, ego: AgentState) -> None:
        st = self.state
        vx = 0.0
        if self.cut_in and st.y >= self.trigger_y and st.x > EGO_LANE_X:
            committed = st.x <= SIDE_LANE_X - 0.5 * LANE_WIDTH
            gap_ok = st.y - ego.y > max(SIDE_MERGE_GAP_MIN,
                                        SIDE_MERGE_HEADWAY * ego.speed)
            if committed or gap_ok:
                vx = -SIDE_LATERAL_SPEED
        st.x = max(EGO_LANE_X, st.x + vx * DT)
        st.y += self.forward_speed * DT
        if self.cut_in and st.x <= EGO_LANE_X \
                and self.forward_speed > SIDE_CUT_SPEED:
            old = self.forward_speed
            self.forward_speed = max(SIDE_CUT_SPEED, old - SIDE_DECEL * DT)
            st.accel = (self.forward_speed - old) / DT
        else:
            st.accel = 0.0
        # keep the pose consistent with the true motion vector
        st.speed = math.hypot(vx, self.forward_speed)
        st.heading = math.atan2(self.forward_speed, vx)


def make_side(rng: np.random.Generator, cut_in_prob: float) -> SideController:
    cut = rng.random() < cut_in_prob
    trigger = rng.uniform(-40.0, -15.0)
    return SideController(cut_in=cut, trigger_y=trigger)
