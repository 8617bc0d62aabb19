"""Route and scenario data types plus road-situation analysis.

Field names on disk use lowercase-hyphen keys (``lane-width``,
``anchor-distance``) and floats are written with Python's shortest
round-trip repr, which never loses precision.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ValidationError
from .geometry import Polyline

JUNCTION_MIN_TURN = math.radians(60.0)
JUNCTION_MAX_SPAN = 40.0


class ScenarioKind(str, enum.Enum):
    LaneFollow = "LaneFollow"
    VanillaTurn = "VanillaTurn"
    RouteObstacleSameWay = "RouteObstacleSameWay"
    RouteObstacleTwoWays = "RouteObstacleTwoWays"
    HardBrake = "HardBrake"
    CutIn = "CutIn"
    DynamicObjectCrossing = "DynamicObjectCrossing"
    SignalizedLeftTurn = "SignalizedLeftTurn"
    NonSignalizedLeftTurn = "NonSignalizedLeftTurn"
    RightTurnMergeFlow = "RightTurnMergeFlow"
    EnterActorFlow = "EnterActorFlow"
    YieldToEmergencyVehicle = "YieldToEmergencyVehicle"

    def __str__(self):
        return self.value

    @property
    def requirement(self) -> "Requirement":
        return REQUIREMENTS[self]


@dataclass(frozen=True)
class Requirement:
    """Road situation an archetype needs around its anchor."""

    situation: str  # straight | junction | junction-left | junction-right
    two_way: bool = False
    multi_lane: bool = False
    before: float = 30.0  # clear distance needed before the anchor
    after: float = 20.0  # and after it


REQUIREMENTS = {
    ScenarioKind.LaneFollow: Requirement("straight", before=10.0, after=10.0),
    ScenarioKind.VanillaTurn: Requirement("junction", before=25.0, after=15.0),
    ScenarioKind.RouteObstacleSameWay: Requirement("straight", multi_lane=True, before=40.0, after=30.0),
    ScenarioKind.RouteObstacleTwoWays: Requirement("straight", two_way=True, before=40.0, after=30.0),
    ScenarioKind.HardBrake: Requirement("straight", before=45.0, after=20.0),
    ScenarioKind.CutIn: Requirement("straight", multi_lane=True, before=40.0, after=25.0),
    ScenarioKind.DynamicObjectCrossing: Requirement("straight", before=35.0, after=15.0),
    ScenarioKind.SignalizedLeftTurn: Requirement("junction-left", two_way=True, before=30.0, after=20.0),
    ScenarioKind.NonSignalizedLeftTurn: Requirement("junction-left", two_way=True, before=30.0, after=20.0),
    ScenarioKind.RightTurnMergeFlow: Requirement("junction-right", before=30.0, after=25.0),
    ScenarioKind.EnterActorFlow: Requirement("junction", before=30.0, after=20.0),
    ScenarioKind.YieldToEmergencyVehicle: Requirement("straight", multi_lane=True, before=20.0, after=40.0),
}

# legal (low, high) ranges of every kind-specific parameter
PARAM_RANGES: dict[ScenarioKind, dict[str, tuple[float, float]]] = {
    ScenarioKind.LaneFollow: {},
    ScenarioKind.VanillaTurn: {},
    ScenarioKind.RouteObstacleSameWay: {"obstacle-length": (3.0, 8.0), "trigger-distance": (30.0, 40.0)},
    ScenarioKind.RouteObstacleTwoWays: {
        "obstacle-length": (3.0, 8.0),
        "flow-speed-min": (8.0, 18.0),
        "flow-speed-max": (8.0, 18.0),
        "interval-min": (15.0, 50.0),
        "interval-max": (15.0, 50.0),
        "trigger-distance": (30.0, 40.0),
    },
    ScenarioKind.HardBrake: {
        "lead-gap": (18.0, 28.0),
        "lead-speed": (5.0, 8.0),
        "hold-time": (1.0, 3.0),
        "trigger-distance": (1.0, 1.0),
    },
    ScenarioKind.CutIn: {"trigger-distance": (10.0, 18.0), "cut-in-speed": (5.0, 8.0)},
    ScenarioKind.DynamicObjectCrossing: {
        "trigger-distance": (14.0, 24.0),
        "walker-speed": (1.0, 2.0),
        "bicycle": (0.0, 1.0),
    },
    ScenarioKind.SignalizedLeftTurn: {
        "flow-speed-min": (8.0, 18.0),
        "flow-speed-max": (8.0, 18.0),
        "interval-min": (15.0, 50.0),
        "interval-max": (15.0, 50.0),
        "red-time": (2.0, 6.0),
        "trigger-distance": (40.0, 40.0),
    },
    ScenarioKind.NonSignalizedLeftTurn: {
        "flow-speed-min": (8.0, 18.0),
        "flow-speed-max": (8.0, 18.0),
        "interval-min": (15.0, 50.0),
        "interval-max": (15.0, 50.0),
        "trigger-distance": (40.0, 40.0),
    },
    ScenarioKind.RightTurnMergeFlow: {
        "flow-speed-min": (8.0, 18.0),
        "flow-speed-max": (8.0, 18.0),
        "interval-min": (15.0, 50.0),
        "interval-max": (15.0, 50.0),
        "trigger-distance": (40.0, 40.0),
    },
    ScenarioKind.EnterActorFlow: {
        "flow-speed-min": (8.0, 14.0),
        "flow-speed-max": (8.0, 14.0),
        "interval-min": (15.0, 30.0),
        "interval-max": (15.0, 30.0),
        "flow-count": (2.0, 5.0),
        "trigger-distance": (20.0, 30.0),
    },
    ScenarioKind.YieldToEmergencyVehicle: {"emergency-speed": (12.0, 16.0), "start-gap": (30.0, 45.0)},
}


def _fmt(v):
    return float(v)


@dataclass(frozen=True)
class TrafficControlSpec:
    """A traffic light or stop sign standing at ``distance`` along the route."""

    kind: str  # traffic-light | stop-sign
    distance: float
    red_time: float = 0.0
    green_time: float = 1e9

    def to_dict(self):
        return {
            "kind": self.kind,
            "distance": _fmt(self.distance),
            "red-time": _fmt(self.red_time),
            "green-time": _fmt(self.green_time),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], float(d["distance"]), float(d.get("red-time", 0.0)), float(d.get("green-time", 1e9)))


@dataclass(frozen=True)
class Junction:
    s_start: float
    s_end: float
    s_center: float
    turn: float  # signed total heading change, left positive
    corner: tuple[float, float]
    dir_in: tuple[float, float]
    dir_out: tuple[float, float]

    @property
    def side(self) -> str:
        return "left" if self.turn > 0 else "right"


@dataclass(frozen=True)
class RouteSpec:
    id: str
    waypoints: tuple[tuple[float, float], ...]
    lane_width: float = 3.5
    controls: tuple[TrafficControlSpec, ...] = ()
    lanes: int = 1
    two_way: bool = False

    def __post_init__(self):
        validate_route(self)

    @cached_property
    def polyline(self) -> Polyline:
        return Polyline(self.waypoints)

    @property
    def length(self) -> float:
        return self.polyline.length

    @cached_property
    def junctions(self) -> tuple[Junction, ...]:
        return find_junctions(self.polyline)

    def straight_zones(self, margin: float = 5.0) -> list[tuple[float, float]]:
        """Arc-length intervals that are clear of junctions."""
        zones = []
        cur = 0.0
        for j in self.junctions:
            if j.s_start - margin > cur:
                zones.append((cur, j.s_start - margin))
            cur = j.s_end + margin
        if self.length > cur:
            zones.append((cur, self.length))
        return zones

    def tags(self) -> list[dict]:
        """Segment tags used for road-situation matching."""
        out = []
        for a, b in self.straight_zones():
            out.append({"situation": "straight", "start": a, "end": b})
        for j in self.junctions:
            out.append({"situation": f"junction-{j.side}", "start": j.s_start, "end": j.s_end})
        out.sort(key=lambda t: t["start"])
        return out

    def to_dict(self):
        return {
            "id": self.id,
            "waypoints": [[_fmt(x), _fmt(y)] for x, y in self.waypoints],
            "lane-width": _fmt(self.lane_width),
            "controls": [c.to_dict() for c in self.controls],
            "lanes": int(self.lanes),
            "two-way": bool(self.two_way),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                id=str(d["id"]),
                waypoints=tuple((float(x), float(y)) for x, y in d["waypoints"]),
                lane_width=float(d.get("lane-width", 3.5)),
                controls=tuple(TrafficControlSpec.from_dict(c) for c in d.get("controls", [])),
                lanes=int(d.get("lanes", 1)),
                two_way=bool(d.get("two-way", False)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"malformed route document: {exc}") from exc


def validate_route(route: RouteSpec):
    if len(route.waypoints) < 2:
        raise ValidationError(f"route {route.id!r} needs >= 2 waypoints")
    pts = np.asarray(route.waypoints, dtype=np.float64)
    if not np.all(np.isfinite(pts)):
        raise ValidationError(f"route {route.id!r} has NaN/Inf waypoints")
    if np.any(np.hypot(*np.diff(pts, axis=0).T) <= 1e-9):
        raise ValidationError(f"route {route.id!r} has duplicate consecutive waypoints")
    if route.lane_width <= 0 or route.lanes < 1:
        raise ValidationError(f"route {route.id!r} has invalid lane layout")


@dataclass(frozen=True)
class ScenarioInstance:
    kind: ScenarioKind
    anchor_distance: float
    params: dict = field(default_factory=dict)

    def validate(self, route: RouteSpec | None = None):
        if route is not None and not (0.0 <= self.anchor_distance <= route.length):
            raise ValidationError(
                f"{self.kind} anchor {self.anchor_distance:.2f} m outside route of {route.length:.2f} m"
            )
        ranges = PARAM_RANGES[self.kind]
        for name, value in self.params.items():
            if name not in ranges:
                raise ValidationError(f"{self.kind}: unknown parameter {name!r}")
            lo, hi = ranges[name]
            if not lo - 1e-9 <= value <= hi + 1e-9:
                raise ValidationError(f"{self.kind}: {name}={value} outside [{lo}, {hi}]")

    def param(self, name: str) -> float:
        if name in self.params:
            return float(self.params[name])
        lo, hi = PARAM_RANGES[self.kind][name]
        return 0.5 * (lo + hi)

    def to_dict(self):
        return {
            "kind": self.kind.value,
            "anchor-distance": _fmt(self.anchor_distance),
            "params": {k: _fmt(v) for k, v in sorted(self.params.items())},
        }

    @classmethod
    def from_dict(cls, d):
        try:
            kind = ScenarioKind(d["kind"])
        except (KeyError, ValueError) as exc:
            raise ValidationError(f"unknown scenario kind in {d!r}") from exc
        inst = cls(kind, float(d["anchor-distance"]), {k: float(v) for k, v in d.get("params", {}).items()})
        inst.validate()
        return inst


def find_junctions(line: Polyline) -> tuple[Junction, ...]:
    """Group sharply turning vertices into junctions.

    A junction is a run of turning vertices no longer than
    ``JUNCTION_MAX_SPAN`` whose accumulated heading change reaches
    ``JUNCTION_MIN_TURN``. Gentle bends spread over long distances do not
    qualify.
    """
    headings = np.arctan2(line.dirs[:, 1], line.dirs[:, 0])
    turns = np.angle(np.exp(1j * np.diff(headings)))  # per interior vertex
    out = []
    i = 0
    n = len(turns)
    while i < n:
        if abs(turns[i]) < math.radians(2.0):
            i += 1
            continue
        j = i
        total = turns[i]
        while (
            j + 1 < n
            and abs(turns[j + 1]) >= math.radians(2.0)
            and np.sign(turns[j + 1]) == np.sign(turns[i])
            and line.cum[j + 2] - line.cum[i + 1] <= JUNCTION_MAX_SPAN
        ):
            j += 1
            total += turns[j]
        s0, s1 = float(line.cum[i + 1]), float(line.cum[j + 1])
        if abs(total) >= JUNCTION_MIN_TURN and s1 - s0 <= JUNCTION_MAX_SPAN:
            d_in = line.dirs[i]
            d_out = line.dirs[j + 1]
            p0 = line.points[i + 1]
            p1 = line.points[j + 1]
            # corner = intersection of the incoming and outgoing tangent lines
            mat = np.array([[d_in[0], -d_out[0]], [d_in[1], -d_out[1]]])
            try:
                t = np.linalg.solve(mat, p1 - p0)
                corner = p0 + t[0] * d_in
            except np.linalg.LinAlgError:
                corner = 0.5 * (p0 + p1)
            out.append(
                Junction(
                    s_start=s0,
                    s_end=s1,
                    s_center=0.5 * (s0 + s1),
                    turn=float(total),
                    corner=(float(corner[0]), float(corner[1])),
                    dir_in=(float(d_in[0]), float(d_in[1])),
                    dir_out=(float(d_out[0]), float(d_out[1])),
                )
            )
        i = j + 1
    return tuple(out)
