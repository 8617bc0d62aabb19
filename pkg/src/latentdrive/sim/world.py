"""World state, the environment transition and infraction detection."""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .. import reward as rewardlib
from ..actions import to_control
from ..errors import UsageError, ValidationError
from ..routes import RouteSpec, ScenarioInstance, TrafficControlSpec
from .actors import RADIUS, Actor
from .archetypes import instantiate
from .road import EXTENSION, RoadLayout
from .vehicle import DEFAULT_VEHICLE, Control, Pose, VehicleParams, kinematic_step

DONE_REASONS = ("route-complete", "collision", "deviation", "blocked", "timeout")
INFRACTION_KINDS = (
    "collision-pedestrian",
    "collision-vehicle",
    "collision-layout",
    "red-light",
    "stop-sign",
    "agent-blocked",
)
DEFAULT_PENALTIES = {
    "collision-pedestrian": 0.50,
    "collision-vehicle": 0.60,
    "collision-layout": 0.65,
    "red-light": 0.70,
    "stop-sign": 0.80,
    "agent-blocked": 0.70,
}
COLLISION_KIND = {
    "pedestrian": "collision-pedestrian",
    "bicycle": "collision-pedestrian",
    "vehicle": "collision-vehicle",
    "emergency": "collision-vehicle",
    "obstacle": "collision-layout",
}


@dataclass
class SimConfig:
    dt: float = 0.1
    vehicle: VehicleParams = DEFAULT_VEHICLE
    reward: rewardlib.RewardConfig = field(default_factory=rewardlib.RewardConfig)
    ego_radius: float = 1.2
    eps_block: float = 0.1
    n_block: int = 100
    eps_stop: float = 0.3
    stop_zone: float = 8.0
    timeout_factor: float = 4.0
    completion_tolerance: float = 1.0
    penalties: dict = field(default_factory=lambda: dict(DEFAULT_PENALTIES))


@dataclass(frozen=True)
class InfractionEvent:
    kind: str
    tick: int
    penalty_factor: float

    def to_dict(self):
        return {"kind": self.kind, "tick": self.tick, "penalty-factor": self.penalty_factor}

    @classmethod
    def from_dict(cls, d):
        return cls(str(d["kind"]), int(d["tick"]), float(d["penalty-factor"]))


@dataclass
class TrafficControl:
    spec: TrafficControlSpec
    x: float
    y: float
    heading: float
    state: str  # green | yellow-red | stop-sign
    timer: float = 0.0
    satisfied: bool = False  # stop sign: ego came to a halt in the zone
    reported: bool = False

    @property
    def channel(self) -> str:
        if self.state == "stop-sign":
            return "stop-sign"
        return "light-green" if self.state == "green" else "light-yellow-red"

    def update(self, dt: float):
        if self.spec.kind != "traffic-light":
            return
        self.timer += dt
        period = self.spec.red_time + self.spec.green_time
        phase = math.fmod(self.timer, period) if period > 0 else 0.0
        self.state = "yellow-red" if phase < self.spec.red_time else "green"


@dataclass
class RewardTerms:
    r_speed: float = 0.0
    r_travel: float = 0.0
    p_deviation: float = 0.0
    c_steer: float = 0.0


@dataclass
class StepResult:
    world: "WorldState"
    reward_terms: RewardTerms
    infractions: list
    done: bool
    done_reason: str | None
    completion: float


class WorldState:
    """Mutable simulation state; ``step`` advances it in place."""

    def __init__(self, route: RouteSpec, seed: int, config: SimConfig):
        self.route = route
        self.config = config
        self.layout = RoadLayout(route)
        self.layout_offset = EXTENSION
        x, y, h = route.polyline.point_at(0.0)
        self.ego = Pose(x, y, h, 0.0)
        self.control = Control()
        self.prev_steer = 0.0
        self.npcs: list[Actor] = []
        self.spawners: list = []
        self.controls: list[TrafficControl] = []
        self.tick = 0
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        self.progress = 0.0
        self.prev_progress = 0.0
        self.completion = 0.0
        self.slow_ticks = 0
        self.done = False
        self.done_reason = None
        self.infractions: list[InfractionEvent] = []
        self._next_id = 0
        self._collided: set[int] = set()

    # construction helpers used by the archetypes
    def add_actor(self, kind, pose, script, trigger=-math.inf, active=False):
        actor = Actor(self._next_id, kind, pose, RADIUS[kind], script, trigger=trigger, active=active)
        self._next_id += 1
        self.npcs.append(actor)
        return actor

    def actor_by_id(self, actor_id):
        for a in self.npcs:
            if a.id == actor_id:
                return a
        return None

    def add_control(self, spec: TrafficControlSpec):
        x, y, h = self.route.polyline.point_at(spec.distance)
        state = "stop-sign" if spec.kind == "stop-sign" else ("yellow-red" if spec.red_time > 0 else "green")
        self.controls.append(TrafficControl(spec, x, y, h, state))

    @property
    def time_budget_ticks(self) -> int:
        budget = self.route.length / self.config.reward.v_target
        return int(math.ceil(self.config.timeout_factor * budget / self.config.dt))

    def fingerprint(self) -> str:
        """Stable digest of every piece of mutable state (bit-exact)."""
        h = hashlib.sha256()

        def put(*vals):
            for v in vals:
                if isinstance(v, float):
                    h.update(struct.pack("<d", v))
                else:
                    h.update(repr(v).encode())

        put(self.tick, self.ego.x, self.ego.y, self.ego.heading, self.ego.speed)
        put(self.control.throttle, self.control.steer, self.control.brake, self.prev_steer)
        put(self.progress, self.prev_progress, self.completion, self.slow_ticks, self.done, self.done_reason)
        for a in self.npcs:
            put(a.id, a.kind, a.pose.x, a.pose.y, a.pose.heading, a.pose.speed, a.active, a.alive)
            if a.script is not None:
                put(sorted(a.script.state().items()))
        for sp in self.spawners:
            put(sorted(sp.state().items()))
        for c in self.controls:
            put(c.state, c.timer, c.satisfied, c.reported)
        put(self.rng.bit_generator.state)
        put([e.to_dict() for e in self.infractions])
        return h.hexdigest()


def create_world(
    route: RouteSpec, scenarios: list[ScenarioInstance] = (), seed: int = 0, config: SimConfig | None = None
) -> WorldState:
    """Place the ego at the route start and instantiate dormant scenario actors."""
    if not isinstance(route, RouteSpec):
        raise ValidationError("create_world expects a RouteSpec")
    world = WorldState(route, seed, config or SimConfig())
    for spec in route.controls:
        world.add_control(spec)
    for inst in scenarios:
        inst.validate(route)
        instantiate(world, inst)
    s, _ = route_progress(world)
    world.progress = world.prev_progress = s
    return world


def route_progress(world: WorldState):
    """Arc-length progress and signed offset from the lane-centre reference."""
    s, lateral, _ = world.route.polyline.project(world.ego.x, world.ego.y, hint=world.progress)
    lateral -= float(world.layout.detour_at(s))
    return s, lateral


def _discs_overlap(ax, ay, ar, bx, by, br) -> bool:
    return math.hypot(ax - bx, ay - by) < ar + br


def detect_infractions(world: WorldState) -> list[InfractionEvent]:
    """Infractions caused by the most recent transition."""
    cfg = world.config
    pen = cfg.penalties
    events = []
    ego = world.ego
    for a in world.npcs:
        if not a.alive or a.id in world._collided:
            continue
        if _discs_overlap(ego.x, ego.y, cfg.ego_radius, a.pose.x, a.pose.y, a.radius):
            kind = COLLISION_KIND[a.kind]
            world._collided.add(a.id)
            events.append(InfractionEvent(kind, world.tick, pen[kind]))
    if -1 not in world._collided and not world.layout.on_road(ego.x, ego.y):
        world._collided.add(-1)
        events.append(InfractionEvent("collision-layout", world.tick, pen["collision-layout"]))
    for c in world.controls:
        line = c.spec.distance
        crossed = world.prev_progress < line <= world.progress
        if c.spec.kind == "stop-sign":
            if line - cfg.stop_zone <= world.progress <= line and ego.speed < cfg.eps_stop:
                c.satisfied = True
            if crossed and not c.satisfied and not c.reported:
                c.reported = True
                events.append(InfractionEvent("stop-sign", world.tick, pen["stop-sign"]))
        elif crossed and c.state == "yellow-red" and not c.reported:
            c.reported = True
            events.append(InfractionEvent("red-light", world.tick, pen["red-light"]))
    if world.slow_ticks >= cfg.n_block:
        events.append(InfractionEvent("agent-blocked", world.tick, pen["agent-blocked"]))
    return events


def step(world: WorldState, action: int, dt: float | None = None) -> StepResult:
    """Apply one discrete action and advance every actor by ``dt`` seconds."""
    if world.done:
        raise UsageError("step() called on a finished episode; create a new world")
    cfg = world.config
    dt = cfg.dt if dt is None else float(dt)
    if dt <= 0:
        raise UsageError("dt must be positive")
    control = to_control(action)
    world.prev_steer = world.control.steer
    world.control = control
    world.ego = kinematic_step(world.ego, control, dt, cfg.vehicle)
    world.tick += 1

    for c in world.controls:
        c.update(dt)
    for a in world.npcs:
        if not a.active and world.progress >= a.trigger:
            a.active = True
    for sp in world.spawners:
        sp.update(world, dt)
    for a in list(world.npcs):
        if a.active and a.alive and a.script is not None:
            a.script.update(a, world, dt)
    world.npcs = [a for a in world.npcs if a.alive]

    world.prev_progress = world.progress
    s, lateral = route_progress(world)
    world.progress = s
    delta = s - world.prev_progress
    world.completion = max(world.completion, s / world.route.length)
    world.slow_ticks = world.slow_ticks + 1 if world.ego.speed < cfg.eps_block else 0

    events = detect_infractions(world)
    world.infractions.extend(events)

    terms = RewardTerms(
        r_speed=rewardlib.speed_reward(world, cfg.reward),
        r_travel=rewardlib.travel_reward(delta),
        p_deviation=rewardlib.deviation_penalty(lateral, cfg.reward.d_max),
        c_steer=rewardlib.steering_cost(control.steer, world.prev_steer),
    )

    kinds = {e.kind for e in events}
    reason = None
    if kinds & {"collision-pedestrian", "collision-vehicle", "collision-layout"}:
        reason = "collision"
    elif abs(lateral) > cfg.reward.d_max:
        reason = "deviation"
    elif "agent-blocked" in kinds:
        reason = "blocked"
    elif s >= world.route.length - cfg.completion_tolerance:
        reason = "route-complete"
        world.completion = 1.0
    elif world.tick >= world.time_budget_ticks:
        reason = "timeout"
    if reason is not None:
        world.done = True
        world.done_reason = reason
    return StepResult(world, terms, events, world.done, reason, world.completion)
