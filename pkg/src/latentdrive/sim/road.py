"""Drivable-area layout derived from a route: main road plus junction arms."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..geometry import Polyline

ARM_LENGTH = 45.0
EXTENSION = 80.0


def smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


@dataclass(frozen=True)
class Detour:
    """Lateral shift of the lane-centre reference between ``start`` and ``end``."""

    start: float
    end: float
    shift: float
    ramp: float = 12.0

    def at(self, s):
        up = smoothstep((np.asarray(s) - (self.start - self.ramp)) / self.ramp)
        down = 1.0 - smoothstep((np.asarray(s) - self.end) / self.ramp)
        return self.shift * np.minimum(up, down)


@dataclass
class RoadPiece:
    line: Polyline
    lo: float  # right road edge (lateral, metres)
    hi: float  # left road edge
    lane_centers: tuple
    yellow: tuple
    white: tuple


class RoadLayout:
    """Geometry shared by collision checks and rasterisation."""

    def __init__(self, route, detours=()):
        self.route = route
        self.line = route.polyline
        self.detours = tuple(detours)
        w = route.lane_width
        lo = -(route.lanes - 1) * w - 0.5 * w
        hi = 0.5 * w + (w if route.two_way else 0.0)
        centers = tuple(-k * w for k in range(route.lanes)) + ((w,) if route.two_way else ())
        white = (lo, hi) + tuple(-0.5 * w - k * w for k in range(route.lanes - 1))
        yellow = (0.5 * w,) if route.two_way else ()
        self.lo, self.hi = lo, hi
        pieces = [RoadPiece(self.line, lo, hi, centers, yellow, white)]
        for j in route.junctions:
            c = np.array(j.corner)
            din = np.array(j.dir_in)
            dout = np.array(j.dir_out)
            cont = Polyline([c - 0.5 * w * din, c + ARM_LENGTH * din])
            back = Polyline([c - ARM_LENGTH * dout, c + 0.5 * w * dout])
            for arm in (cont, back):
                pieces.append(RoadPiece(arm, lo, hi, centers, yellow, (lo, hi)))
        self.pieces = pieces

    @cached_property
    def extended(self) -> Polyline:
        """Route polyline lengthened by ``EXTENSION`` metres at both ends."""
        pts = self.line.points
        d0 = self.line.dirs[0]
        d1 = self.line.dirs[-1]
        return Polyline(np.vstack([pts[0] - EXTENSION * d0, pts, pts[-1] + EXTENSION * d1]))

    def detour_at(self, s):
        total = np.zeros_like(np.asarray(s, dtype=np.float64))
        for d in self.detours:
            total = total + d.at(s)
        return total

    def on_road(self, x: float, y: float, margin: float = 0.5) -> bool:
        p = np.array([[x, y]])
        for piece in self.pieces:
            _, lat, inside = piece.line.frame_coords(p)
            if inside[0] and piece.lo - margin <= lat[0] <= piece.hi + margin:
                return True
        return False
