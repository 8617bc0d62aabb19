"""The fixed 30-entry discretisation of (throttle, brake, steer)."""

from __future__ import annotations

from .sim.vehicle import Control

# rows are (throttle, brake, steer), read column-block by column-block
ACTION_TABLE: tuple[tuple[float, float, float], ...] = (
    (0.0, 1.0, 0.0),
    (0.7, 0.0, -0.5),
    (0.7, 0.0, -0.3),
    (0.7, 0.0, -0.2),
    (0.7, 0.0, -0.1),
    (0.7, 0.0, 0.0),
    (0.7, 0.0, 0.1),
    (0.7, 0.0, 0.2),
    (0.7, 0.0, 0.3),
    (0.7, 0.0, 0.5),
    (0.3, 0.0, -0.7),
    (0.3, 0.0, -0.5),
    (0.3, 0.0, -0.3),
    (0.3, 0.0, -0.2),
    (0.3, 0.0, -0.1),
    (0.3, 0.0, 0.0),
    (0.3, 0.0, 0.1),
    (0.3, 0.0, 0.2),
    (0.3, 0.0, 0.3),
    (0.3, 0.0, 0.5),
    (0.3, 0.0, 0.7),
    (0.0, 0.0, -1.0),
    (0.0, 0.0, -0.6),
    (0.0, 0.0, -0.3),
    (0.0, 0.0, -0.1),
    (0.0, 0.0, 0.0),
    (0.0, 0.0, 0.1),
    (0.0, 0.0, 0.3),
    (0.0, 0.0, 0.6),
    (0.0, 0.0, 1.0),
)

NUM_ACTIONS = len(ACTION_TABLE)
BRAKE = 0
COAST = ACTION_TABLE.index((0.0, 0.0, 0.0))


def to_control(action: int) -> Control:
    if not 0 <= int(action) < NUM_ACTIONS:
        raise ValueError(f"action {action} outside [0, {NUM_ACTIONS})")
    throttle, brake, steer = ACTION_TABLE[int(action)]
    return Control(throttle=throttle, steer=steer, brake=brake)
