"""Ego pose, control triple and the kinematic bicycle step."""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..geometry import wrap_angle


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float
    speed: float = 0.0


@dataclass(frozen=True)
class Control:
    throttle: float = 0.0
    steer: float = 0.0
    brake: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.throttle <= 1.0 and -1.0 <= self.steer <= 1.0 and 0.0 <= self.brake <= 1.0):
            raise ValueError(f"control out of range: {self}")


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 2.8
    a_max: float = 3.0
    b_max: float = 8.0
    delta_max: float = math.radians(35.0)
    v_max: float = 20.0
    drag: float = 0.05


DEFAULT_VEHICLE = VehicleParams()


def kinematic_step(pose: Pose, control: Control, dt: float, params: VehicleParams = DEFAULT_VEHICLE) -> Pose:
    """Advance one tick of the kinematic bicycle model.

    Speed is updated first and the new speed drives both the yaw rate and
    the displacement; the displacement uses the mid-tick heading.
    """
    accel = params.a_max * control.throttle - params.b_max * control.brake - params.drag * pose.speed
    speed = min(max(pose.speed + accel * dt, 0.0), params.v_max)
    yaw = (speed / params.wheelbase) * math.tan(control.steer * params.delta_max) * dt
    mid = pose.heading + 0.5 * yaw
    x = pose.x + speed * math.cos(mid) * dt
    y = pose.y + speed * math.sin(mid) * dt
    return Pose(x, y, wrap_angle(pose.heading + yaw), speed)
