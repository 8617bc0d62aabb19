"""Scripted non-player actors and traffic-flow spawners.

Every moving actor lives in the frame of a base polyline: an arc length
``s`` plus a lateral offset. Vehicles use IDM car-following against actors
sharing their path and against the ego when it sits inside their lane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import Polyline
from .vehicle import Pose

RADIUS = {"vehicle": 1.2, "pedestrian": 0.4, "bicycle": 0.6, "emergency": 1.3, "obstacle": 1.0}
KINDS = tuple(RADIUS)

IDM_ACCEL = 2.0
IDM_DECEL = 3.0
IDM_HEADWAY = 1.0
IDM_MIN_GAP = 2.0
MAX_DECEL = 8.0
LOOKAHEAD = 40.0


@dataclass
class Actor:
    id: int
    kind: str
    pose: Pose
    radius: float
    script: "Script | None" = None
    trigger: float = -math.inf  # ego progress that wakes the actor
    active: bool = False
    alive: bool = True


class Script:
    """Base class; subclasses keep all their state in plain attributes."""

    def update(self, actor: Actor, world, dt: float):
        raise NotImplementedError

    def state(self):
        return {k: v for k, v in vars(self).items() if isinstance(v, (int, float, str, bool))}


def lane_pose(base: Polyline, s: float, lateral: float, speed: float, heading_offset: float = 0.0) -> Pose:
    x, y, h = base.point_at(s)
    return Pose(x - lateral * math.sin(h), y + lateral * math.cos(h), h + heading_offset, speed)


class LaneFollower(Script):
    """Drive along ``base`` at ``lateral`` offset with IDM speed control."""

    def __init__(self, base: Polyline, s: float, lateral: float, target_speed: float, path_key: str, idm: bool = True):
        self.base = base
        self.s = float(s)
        self.lateral = float(lateral)
        self.speed = 0.0
        self.target_speed = float(target_speed)
        self.path_key = path_key
        self.idm = idm

    def pose(self) -> Pose:
        return lane_pose(self.base, self.s, self.lateral, self.speed)

    def leader_gap(self, actor: Actor, world):
        """Free gap and speed of the nearest thing ahead in this lane."""
        best = (math.inf, 0.0)
        for other in world.npcs:
            sc = other.script
            if other is actor or not other.alive or not isinstance(sc, LaneFollower):
                continue
            if sc.path_key != self.path_key or abs(sc.lateral - self.lateral) > 1.5:
                continue
            ds = sc.s - self.s
            if 0.0 < ds < LOOKAHEAD:
                gap = ds - actor.radius - other.radius
                if gap < best[0]:
                    best = (gap, sc.speed)
        ego = world.ego
        if abs(ego.x - actor.pose.x) < LOOKAHEAD and abs(ego.y - actor.pose.y) < LOOKAHEAD:
            se, le, _ = self.base.project(ego.x, ego.y, hint=self.s)
            ds = se - self.s
            if 0.0 < ds < LOOKAHEAD and abs(le - self.lateral) < 0.5 * world.route.lane_width + 0.3:
                gap = ds - actor.radius - world.config.ego_radius
                if gap < best[0]:
                    best = (gap, ego.speed * math.cos(ego.heading - self.base.heading_at(se)))
        return best

    def accel(self, actor: Actor, world) -> float:
        v = self.speed
        a = IDM_ACCEL * (1.0 - (v / max(self.target_speed, 0.1)) ** 4)
        if self.idm:
            gap, v_lead = self.leader_gap(actor, world)
            if math.isfinite(gap):
                s_star = IDM_MIN_GAP + v * IDM_HEADWAY + v * (v - v_lead) / (2.0 * math.sqrt(IDM_ACCEL * IDM_DECEL))
                a -= IDM_ACCEL * (max(s_star, 0.0) / max(gap, 0.1)) ** 2
        return max(a, -MAX_DECEL)

    def advance(self, actor: Actor, accel: float, dt: float):
        self.speed = max(0.0, self.speed + accel * dt)
        self.s += self.speed * dt
        if self.s >= self.base.length:
            actor.alive = False
        actor.pose = self.pose()

    def update(self, actor, world, dt):
        self.advance(actor, self.accel(actor, world), dt)


class HardBrakeLead(LaneFollower):
    """Cruise, brake to a stop at ``brake_s``, hold, then drive off again."""

    def __init__(self, base, s, lateral, target_speed, path_key, brake_s, hold_time, brake_decel=7.0):
        super().__init__(base, s, lateral, target_speed, path_key, idm=False)
        self.brake_s = float(brake_s)
        self.hold_time = float(hold_time)
        self.brake_decel = float(brake_decel)
        self.phase = "cruise"
        self.timer = 0.0

    def update(self, actor, world, dt):
        if self.phase == "cruise" and self.s >= self.brake_s:
            self.phase = "brake"
        if self.phase == "brake":
            a = -self.brake_decel
            if self.speed <= self.brake_decel * dt:
                self.speed = 0.0
                a = 0.0
                self.phase = "hold"
        elif self.phase == "hold":
            a = 0.0
            self.timer += dt
            if self.timer >= self.hold_time:
                self.phase = "resume"
        else:
            a = self.accel(actor, world)
        self.advance(actor, a, dt)


class CutInVehicle(LaneFollower):
    """Drives in an adjacent lane and merges in front of the ego."""

    def __init__(self, base, s, lateral, target_speed, path_key, trigger_distance, merge_time=3.0):
        super().__init__(base, s, lateral, target_speed, path_key, idm=False)
        self.start_lateral = float(lateral)
        self.trigger_distance = float(trigger_distance)
        self.merge_rate = abs(lateral) / merge_time
        self.merging = False

    def update(self, actor, world, dt):
        ego_s = world.progress + world.layout_offset
        if not self.merging and 0.0 < self.s - ego_s <= self.trigger_distance:
            self.merging = True
        if self.merging and self.lateral != 0.0:
            step = self.merge_rate * dt
            self.lateral = 0.0 if abs(self.lateral) <= step else self.lateral - math.copysign(step, self.lateral)
            self.idm = self.lateral == 0.0
        self.advance(actor, self.accel(actor, world), dt)


class Crosser(Script):
    """Walker or bicycle crossing the road sideways at fixed arc length."""

    def __init__(self, base: Polyline, s: float, lateral: float, end_lateral: float, speed: float):
        self.base = base
        self.s = float(s)
        self.lateral = float(lateral)
        self.end_lateral = float(end_lateral)
        self.speed = float(speed)
        self.direction = 1.0 if end_lateral > lateral else -1.0

    def pose(self, moving=True) -> Pose:
        return lane_pose(self.base, self.s, self.lateral, self.speed if moving else 0.0, self.direction * math.pi / 2)

    def update(self, actor, world, dt):
        self.lateral += self.direction * self.speed * dt
        if (self.lateral - self.end_lateral) * self.direction >= 0.0:
            actor.alive = False
        actor.pose = self.pose()


@dataclass
class FlowSpawner:
    """Spawns a stream of vehicles along ``base`` once the ego reaches ``trigger``."""

    base: Polyline
    lateral: float
    speed_range: tuple
    interval_range: tuple
    trigger: float
    kind: str = "vehicle"
    max_count: int | None = None
    path_key: str = "flow"
    active: bool = False
    spawned: int = 0
    next_gap: float = 0.0
    last_id: int = -1
    extra: dict = field(default_factory=dict)

    def _spawn(self, world, s):
        speed = float(world.rng.uniform(*self.speed_range))
        sc = LaneFollower(self.base, s, self.lateral, speed, self.path_key)
        sc.speed = speed
        actor = world.add_actor(self.kind, sc.pose(), sc, active=True)
        self.spawned += 1
        self.last_id = actor.id
        self.next_gap = float(world.rng.uniform(*self.interval_range))
        return actor

    def _full(self):
        return self.max_count is not None and self.spawned >= self.max_count

    def update(self, world, dt):
        if not self.active:
            if world.progress < self.trigger:
                return
            self.active = True
            # prewarm: fill the path ahead of the entry so traffic is already flowing
            s = 0.0
            positions = []
            gap = float(world.rng.uniform(*self.interval_range))
            while s + gap < self.base.length * 0.6:
                s += gap
                positions.append(s)
                gap = float(world.rng.uniform(*self.interval_range))
            for s in reversed(positions):
                if self._full():
                    break
                x, y, _ = self.base.point_at(s)
                if math.hypot(x - world.ego.x, y - world.ego.y) > 10.0:
                    self._spawn(world, s)
            if not self._full():
                self._spawn(world, 0.0)
            return
        if self._full():
            return
        last = world.actor_by_id(self.last_id)
        if last is None or not last.alive or last.script.s >= self.next_gap:
            self._spawn(world, 0.0)

    def state(self):
        return {k: v for k, v in vars(self).items() if isinstance(v, (int, float, str, bool))}


def straight_line(origin, direction, back: float, forward: float) -> Polyline:
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    return Polyline([o - back * d, o + forward * d])
