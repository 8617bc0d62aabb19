"""Scripted reference policies operating directly on the simulator state."""

from __future__ import annotations

import math

import numpy as np

from .actions import ACTION_TABLE, BRAKE, COAST, NUM_ACTIONS
from .reward import desired_speed

_TABLE = np.asarray(ACTION_TABLE)


class DoNothingPolicy:
    """Never presses the throttle."""

    name = "do-nothing"

    def reset(self, world):
        pass

    def __call__(self, world) -> int:
        return COAST


class RandomPolicy:
    name = "random"

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def reset(self, world):
        pass

    def __call__(self, world) -> int:
        return int(self.rng.integers(NUM_ACTIONS))


def nearest_action(throttle_group: float, steer: float) -> int:
    """Index of the table row in ``throttle_group`` whose steer is closest."""
    rows = np.flatnonzero((_TABLE[:, 0] == throttle_group) & (_TABLE[:, 1] == 0.0))
    return int(rows[np.argmin(np.abs(_TABLE[rows, 2] - steer))])


class LaneKeepingPolicy:
    """Pure-pursuit steering on the lane centre plus hazard-aware speed control.

    It reads privileged simulator state, so it serves as an upper reference
    and as the scripted data source for world-model fixtures.
    """

    name = "lane-keeping"

    def __init__(self, speed_fraction: float = 1.0, lookahead_time: float = 0.8):
        self.speed_fraction = speed_fraction
        self.lookahead_time = lookahead_time

    def reset(self, world):
        pass

    def steer(self, world) -> float:
        ego = world.ego
        line = world.route.polyline
        look = max(5.0, self.lookahead_time * ego.speed)
        s = min(world.progress + look, line.length + look)
        x, y, h = line.point_at(min(s, line.length))
        if s > line.length:
            x += (s - line.length) * math.cos(h)
            y += (s - line.length) * math.sin(h)
        shift = float(world.layout.detour_at(min(s, line.length)))
        x -= shift * math.sin(h)
        y += shift * math.cos(h)
        alpha = math.atan2(y - ego.y, x - ego.x) - ego.heading
        alpha = math.atan2(math.sin(alpha), math.cos(alpha))
        dist = max(math.hypot(x - ego.x, y - ego.y), 1e-3)
        params = world.config.vehicle
        delta = math.atan2(2.0 * params.wheelbase * math.sin(alpha), dist)
        return max(-1.0, min(1.0, delta / params.delta_max))

    def __call__(self, world) -> int:
        v = world.ego.speed
        target = self.speed_fraction * desired_speed(world, world.config.reward)
        steer = self.steer(world)
        if target < 0.5 and v < 0.5 or v > target + 1.0:
            return BRAKE
        if v < target - 0.5:
            return nearest_action(0.7, steer)
        if v < target:
            return nearest_action(0.3, steer)
        return nearest_action(0.0, steer)


POLICIES = {"do-nothing": DoNothingPolicy, "random": RandomPolicy, "lane-keeping": LaneKeepingPolicy}
