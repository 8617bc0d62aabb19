"""Shaped driving reward: speed tracking, travel, deviation and steering cost."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

DEFAULT_SAFE_DISTANCE = {
    "vehicle": 12.0,
    "emergency": 15.0,
    "pedestrian": 10.0,
    "bicycle": 10.0,
    "obstacle": 10.0,
    "light-yellow-red": 10.0,
    "stop-sign": 10.0,
}


@dataclass
class RewardConfig:
    alpha_travel: float = 1.0
    alpha_deviation: float = 0.5
    alpha_steer: float = 0.3
    d_max: float = 2.0
    v_target: float = 8.0
    safe_distance: dict = field(default_factory=lambda: dict(DEFAULT_SAFE_DISTANCE))
    corridor: float = 0.8  # extra lateral clearance of the hazard corridor
    prediction_horizon: float = 1.0

    def __post_init__(self):
        if min(self.alpha_travel, self.alpha_deviation, self.alpha_steer) < 0:
            raise ValueError("reward weights must be >= 0")
        if self.d_max <= 0 or self.v_target <= 0:
            raise ValueError("d_max and v_target must be > 0")


def hazard_gaps(world, cfg: RewardConfig):
    """Yield ``(kind, free_gap)`` for every hazard in the ego's path."""
    ego = world.ego
    r_ego = world.config.ego_radius
    c, s = math.cos(ego.heading), math.sin(ego.heading)
    for a in world.npcs:
        if not a.alive:
            continue
        half = r_ego + a.radius + cfg.corridor
        vx = a.pose.speed * math.cos(a.pose.heading)
        vy = a.pose.speed * math.sin(a.pose.heading)
        for t in (0.0, cfg.prediction_horizon):
            dx = a.pose.x + vx * t - ego.x
            dy = a.pose.y + vy * t - ego.y
            fwd = dx * c + dy * s
            side = -dx * s + dy * c
            if fwd > 0.0 and abs(side) <= half:
                yield a.kind, max(math.hypot(dx, dy) - r_ego - a.radius, 0.0)
                break
    for ctl in world.controls:
        d = ctl.spec.distance - world.progress - r_ego
        if d < -r_ego:
            continue
        if ctl.state == "yellow-red" or (ctl.state == "stop-sign" and not ctl.satisfied):
            yield ctl.channel, max(d, 0.0)


def desired_speed(world, cfg: RewardConfig) -> float:
    scale = 1.0
    for kind, gap in hazard_gaps(world, cfg):
        safe = cfg.safe_distance.get(kind, 10.0)
        scale = min(scale, min(max(gap / safe, 0.0), 1.0))
    return cfg.v_target * scale


def speed_reward(world, cfg: RewardConfig) -> float:
    v_des = desired_speed(world, cfg)
    r = 1.0 - abs(world.ego.speed - v_des) / cfg.v_target
    return min(max(r, -1.0), 1.0)


def travel_reward(progress_delta: float) -> float:
    return max(float(progress_delta), 0.0)


def deviation_penalty(lateral_offset: float, d_max: float) -> float:
    if d_max <= 0:
        raise ValueError("d_max must be > 0")
    return -min(abs(lateral_offset), d_max) / d_max


def steering_cost(steer: float, steer_prev: float) -> float:
    return -abs(steer - steer_prev)


def total_reward(terms, cfg: RewardConfig) -> float:
    return (
        terms.r_speed
        + cfg.alpha_travel * terms.r_travel
        + cfg.alpha_deviation * terms.p_deviation
        + cfg.alpha_steer * terms.c_steer
    )
