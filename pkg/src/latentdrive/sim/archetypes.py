"""Turn a :class:`ScenarioInstance` into actors, spawners, controls and detours."""

from __future__ import annotations

import math

import numpy as np

from ..geometry import Polyline
from ..routes import ScenarioKind, TrafficControlSpec
from .actors import RADIUS, CutInVehicle, Crosser, FlowSpawner, HardBrakeLead, LaneFollower, straight_line
from .road import EXTENSION, Detour


def _junction_near(route, s):
    if not route.junctions:
        raise ValueError("junction archetype on a route without junctions")
    return min(route.junctions, key=lambda j: abs(j.s_center - s))


def _left(d):
    return np.array([-d[1], d[0]])


def _flow_params(inst):
    lo_v, hi_v = sorted((inst.param("flow-speed-min"), inst.param("flow-speed-max")))
    lo_i, hi_i = sorted((inst.param("interval-min"), inst.param("interval-max")))
    return (lo_v, hi_v), (lo_i, hi_i)


def instantiate(world, inst):
    """Populate ``world`` with the dormant actors of one scenario instance."""
    route = world.route
    base = world.layout.extended
    w = route.lane_width
    a = inst.anchor_distance
    off = EXTENSION
    kind = inst.kind

    if kind in (ScenarioKind.LaneFollow, ScenarioKind.VanillaTurn):
        return

    if kind is ScenarioKind.HardBrake:
        gap = inst.param("lead-gap")
        start = min(gap, a - 12.0)
        sc = HardBrakeLead(base, start + off, 0.0, inst.param("lead-speed"), "route", a + off, inst.param("hold-time"))
        world.add_actor("vehicle", sc.pose(), sc, trigger=inst.param("trigger-distance"))
        return

    if kind is ScenarioKind.DynamicObjectCrossing:
        bicycle = inst.param("bicycle") >= 0.5
        kind_name = "bicycle" if bicycle else "pedestrian"
        speed = inst.param("walker-speed") * (2.5 if bicycle else 1.0)
        start_lat = world.layout.lo - 2.0
        end_lat = world.layout.hi + 2.0
        sc = Crosser(base, a + off, start_lat, end_lat, speed)
        world.add_actor(kind_name, sc.pose(moving=False), sc, trigger=a - inst.param("trigger-distance"))
        prop = Crosser(base, a - 3.0 + off, world.layout.lo - 1.4, world.layout.lo - 1.4, 0.0)
        world.add_actor("obstacle", prop.pose(moving=False), None)
        return

    if kind in (ScenarioKind.RouteObstacleSameWay, ScenarioKind.RouteObstacleTwoWays):
        length = inst.param("obstacle-length")
        n = max(1, int(math.ceil(length / 2.0)))
        for i in range(n):
            s = a + i * length / max(n - 1, 1) if n > 1 else a
            sc = Crosser(base, s + off, 0.0, 0.0, 0.0)
            world.add_actor("obstacle", sc.pose(moving=False), None)
        shift = w if kind is ScenarioKind.RouteObstacleTwoWays else -w
        world.layout.detours += (Detour(a - 6.0, a + length + 6.0, shift),)
        if kind is ScenarioKind.RouteObstacleTwoWays:
            speeds, intervals = _flow_params(inst)
            rev = base.sub(off, min(a + off + 90.0, base.length))
            rev_pts = rev.points[::-1]
            path = Polyline(rev_pts)
            # opposite lane seen from the reversed direction lies on its right
            world.spawners.append(
                FlowSpawner(path, -w, speeds, intervals, a - inst.param("trigger-distance"), path_key="oncoming")
            )
        return

    if kind is ScenarioKind.CutIn:
        s0 = a + off
        sc = CutInVehicle(base, s0, -w, inst.param("cut-in-speed"), "route", inst.param("trigger-distance"))
        world.add_actor("vehicle", sc.pose(), sc, trigger=a - 35.0)
        return

    if kind is ScenarioKind.YieldToEmergencyVehicle:
        sc = LaneFollower(base, off - inst.param("start-gap"), 0.0, inst.param("emergency-speed"), "route")
        world.add_actor("emergency", sc.pose(), sc, trigger=a - 10.0)
        return

    j = _junction_near(route, a)
    din = np.array(j.dir_in)
    dout = np.array(j.dir_out)
    corner = np.array(j.corner)
    trigger = a - inst.param("trigger-distance")

    if kind in (ScenarioKind.SignalizedLeftTurn, ScenarioKind.NonSignalizedLeftTurn):
        speeds, intervals = _flow_params(inst)
        origin = corner + w * _left(din)
        path = straight_line(origin, -din, 70.0, 60.0)
        world.spawners.append(FlowSpawner(path, 0.0, speeds, intervals, trigger, path_key="oncoming"))
        line_s = max(j.s_start - 2.0, 1.0)
        if kind is ScenarioKind.SignalizedLeftTurn:
            world.add_control(TrafficControlSpec("traffic-light", line_s, inst.param("red-time"), 1e9))
        else:
            world.add_control(TrafficControlSpec("stop-sign", line_s))
        return

    if kind is ScenarioKind.RightTurnMergeFlow:
        speeds, intervals = _flow_params(inst)
        path = straight_line(corner, dout, 70.0, 70.0)
        world.spawners.append(FlowSpawner(path, 0.0, speeds, intervals, trigger, path_key="merge"))
        return

    if kind is ScenarioKind.EnterActorFlow:
        speeds, intervals = _flow_params(inst)
        entry = np.array(route.polyline.point_at(j.s_start)[:2])
        side = -1.0 if j.turn > 0 else 1.0  # flow comes from the side the ego turns towards
        path = straight_line(entry + 0.5 * w * din, side * _left(din), 60.0, 60.0)
        world.spawners.append(
            FlowSpawner(
                path,
                0.0,
                speeds,
                intervals,
                trigger,
                kind="emergency",
                max_count=int(round(inst.param("flow-count"))),
                path_key="cross",
            )
        )
        return

    raise ValueError(f"unsupported scenario kind {kind}")


__all__ = ["instantiate", "RADIUS"]
