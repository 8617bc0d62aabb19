"""Ego-centric bird's-eye-view rasterisation and the measurement vector.

The raster is heading-up with the ego at column ``W/2`` and row ``3H/4``.
Channels (34 in total):

====  ==============================================================
0-5   road, route, ego, lane, yellow-line, white-line
6-33  for each of vehicle, walker, emergency-car, obstacle,
      green-traffic-light, yellow&red-traffic-light, stop-sign:
      4 temporal planes at tick offsets -16, -11, -6, -1 (oldest first)
====  ==============================================================
"""

from __future__ import annotations

import math
import os
from collections import deque
from dataclasses import dataclass

import numpy as np

from .sim.road import EXTENSION

STATIC_CHANNELS = ("road", "route", "ego", "lane", "yellow-line", "white-line")
DYNAMIC_KINDS = (
    "vehicle",
    "walker",
    "emergency-car",
    "obstacle",
    "green-traffic-light",
    "yellow&red-traffic-light",
    "stop-sign",
)
HISTORY_OFFSETS = (-16, -11, -6, -1)
MEASUREMENTS_PER_STEP = 5  # speed, throttle, steer, brake, relative height

ACTOR_CHANNEL = {
    "vehicle": "vehicle",
    "pedestrian": "walker",
    "bicycle": "walker",
    "emergency": "emergency-car",
    "obstacle": "obstacle",
}
CONTROL_CHANNEL = {
    "light-green": "green-traffic-light",
    "light-yellow-red": "yellow&red-traffic-light",
    "stop-sign": "stop-sign",
}


def channel_names(offsets=HISTORY_OFFSETS) -> list[str]:
    names = list(STATIC_CHANNELS)
    for kind in DYNAMIC_KINDS:
        names += [f"{kind}@{o}" for o in offsets]
    return names


@dataclass(frozen=True)
class BevConfig:
    size: int = 64
    meters_per_pixel: float = 0.8
    offsets: tuple = HISTORY_OFFSETS

    @property
    def channels(self) -> int:
        return len(STATIC_CHANNELS) + len(DYNAMIC_KINDS) * len(self.offsets)

    @property
    def anchor(self) -> tuple[int, int]:
        """(row, column) of the ego pixel."""
        return int(0.75 * self.size), int(0.5 * self.size)

    @property
    def measurement_size(self) -> int:
        return MEASUREMENTS_PER_STEP * len(self.offsets)

    @property
    def depth(self) -> int:
        return -min(self.offsets)


REFERENCE_BEV = BevConfig(size=128, meters_per_pixel=0.4)
DESK_BEV = BevConfig()


@dataclass
class BevObservation:
    masks: np.ndarray  # H x W x C, uint8 in {0, 1}
    measurements: np.ndarray  # float32, length 5 per history step

    def chw(self) -> np.ndarray:
        return np.ascontiguousarray(self.masks.transpose(2, 0, 1))


@dataclass(frozen=True)
class Snapshot:
    """What the raster needs to remember about one past tick."""

    tick: int
    discs: tuple  # (channel, x, y, radius)
    controls: tuple  # (channel, x, y, heading, half_width)
    speed: float
    throttle: float
    steer: float
    brake: float


def snapshot(world) -> Snapshot:
    discs = tuple(
        (ACTOR_CHANNEL[a.kind], a.pose.x, a.pose.y, a.radius) for a in world.npcs if a.alive
    )
    layout = world.layout
    half = 0.5 * (layout.hi - layout.lo)
    mid = 0.5 * (layout.hi + layout.lo)
    ctl = []
    for c in world.controls:
        # stop line spans the whole carriageway, centred on the road axis
        x = c.x - mid * math.sin(c.heading)
        y = c.y + mid * math.cos(c.heading)
        ctl.append((CONTROL_CHANNEL[c.channel], x, y, c.heading, half))
    ctrl = world.control
    return Snapshot(world.tick, discs, tuple(ctl), world.ego.speed, ctrl.throttle, ctrl.steer, ctrl.brake)


class HistoryRing:
    """Keeps the last ``depth`` snapshots; offset -1 is the newest."""

    def __init__(self, depth: int = 16):
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.depth = depth
        self.buf: deque[Snapshot] = deque(maxlen=depth)

    def reset(self, world):
        self.buf.clear()
        self.push(world)

    def push(self, world):
        self.buf.append(snapshot(world))

    def __len__(self):
        return len(self.buf)

    def at(self, offset: int) -> Snapshot:
        """Snapshot ``-offset - 1`` ticks ago; clamps to the oldest one held."""
        if not -self.depth <= offset <= -1:
            raise ValueError(f"offset {offset} outside [-{self.depth}, -1]")
        if not self.buf:
            raise ValueError("history is empty; call reset(world) first")
        idx = max(len(self.buf) + offset, 0)
        return self.buf[idx]


def pixel_grid(cfg: BevConfig):
    """Forward and left coordinates (metres, ego frame) of every pixel centre."""
    n = cfg.size
    ar, ac = cfg.anchor
    rows = np.arange(n, dtype=np.float64)
    cols = np.arange(n, dtype=np.float64)
    fwd = (ar - rows)[:, None] * cfg.meters_per_pixel * np.ones((1, n))
    left = (ac - cols)[None, :] * cfg.meters_per_pixel * np.ones((n, 1))
    return fwd, left


_GRID_CACHE: dict = {}


def _world_pixels(ego, cfg: BevConfig):
    key = (cfg.size, cfg.meters_per_pixel)
    if key not in _GRID_CACHE:
        _GRID_CACHE[key] = pixel_grid(cfg)
    fwd, left = _GRID_CACHE[key]
    c, s = math.cos(ego.heading), math.sin(ego.heading)
    x = ego.x + fwd * c - left * s
    y = ego.y + fwd * s + left * c
    return np.stack([x.ravel(), y.ravel()], axis=1)


def _to_pixels(ego, x, y, cfg: BevConfig):
    """Fractional (row, col) of a world point."""
    dx, dy = x - ego.x, y - ego.y
    c, s = math.cos(ego.heading), math.sin(ego.heading)
    f = dx * c + dy * s
    l = -dx * s + dy * c
    ar, ac = cfg.anchor
    return ar - f / cfg.meters_per_pixel, ac - l / cfg.meters_per_pixel


def _draw_disc(plane, ego, x, y, radius, cfg: BevConfig):
    mpp = cfg.meters_per_pixel
    r = max(radius, 0.75 * mpp) / mpp
    rc, cc = _to_pixels(ego, x, y, cfg)
    n = cfg.size
    r0, r1 = max(int(math.floor(rc - r)), 0), min(int(math.ceil(rc + r)) + 1, n)
    c0, c1 = max(int(math.floor(cc - r)), 0), min(int(math.ceil(cc + r)) + 1, n)
    if r0 >= r1 or c0 >= c1:
        return
    rr = np.arange(r0, r1)[:, None] - rc
    cc_ = np.arange(c0, c1)[None, :] - cc
    plane[r0:r1, c0:c1] |= (rr * rr + cc_ * cc_ <= r * r).astype(np.uint8)


def _draw_bar(plane, ego, x, y, heading, half_width, thickness, cfg: BevConfig):
    """A rectangle across the road: ``half_width`` sideways, ``thickness`` along."""
    mpp = cfg.meters_per_pixel
    reach = (half_width + thickness) / mpp + 1
    rc, cc = _to_pixels(ego, x, y, cfg)
    n = cfg.size
    r0, r1 = max(int(math.floor(rc - reach)), 0), min(int(math.ceil(rc + reach)) + 1, n)
    c0, c1 = max(int(math.floor(cc - reach)), 0), min(int(math.ceil(cc + reach)) + 1, n)
    if r0 >= r1 or c0 >= c1:
        return
    # pixel offsets in metres, ego frame (forward, left)
    f = (rc - np.arange(r0, r1))[:, None] * mpp
    l = (cc - np.arange(c0, c1))[None, :] * mpp
    rel = heading - ego.heading
    c, s = math.cos(rel), math.sin(rel)
    along = f * c + l * s
    across = -f * s + l * c
    mask = (np.abs(along) <= 0.5 * thickness) & (np.abs(across) <= half_width)
    plane[r0:r1, c0:c1] |= mask.astype(np.uint8)


def _static_planes(world, cfg: BevConfig, out: np.ndarray):
    layout = world.layout
    route = world.route
    n = cfg.size
    pix = _world_pixels(world.ego, cfg)
    view = cfg.size * cfg.meters_per_pixel * 1.5
    line_half = max(0.25, 0.5 * cfg.meters_per_pixel)
    road = np.zeros(n * n, dtype=bool)
    lane = np.zeros_like(road)
    yellow = np.zeros_like(road)
    white = np.zeros_like(road)
    for k, piece in enumerate(layout.pieces):
        line = layout.extended if k == 0 else piece.line
        s, lat, inside = line.frame_coords(pix, max_dist=view)
        on = inside & (lat >= piece.lo) & (lat <= piece.hi)
        if not on.any():
            continue
        road |= on
        for c in piece.lane_centers:
            lane |= on & (np.abs(lat - c) <= line_half)
        for c in piece.yellow:
            yellow |= on & (np.abs(lat - c) <= line_half)
        for c in piece.white:
            white |= inside & (np.abs(lat - c) <= line_half)
        if k == 0:
            s_route = s - EXTENSION
            centre = layout.detour_at(np.clip(s_route, 0.0, route.length))
            along = (s_route >= 0.0) & (s_route <= route.length)
            out[1] = (inside & along & (np.abs(lat - centre) <= 0.5 * route.lane_width)).reshape(n, n)
    out[0] = road.reshape(n, n)
    out[3] = lane.reshape(n, n)
    out[4] = yellow.reshape(n, n)
    out[5] = white.reshape(n, n)
    ego_plane = np.zeros((n, n), dtype=np.uint8)
    _draw_disc(ego_plane, world.ego, world.ego.x, world.ego.y, world.config.ego_radius, cfg)
    out[2] = ego_plane


def rasterize(world, history: HistoryRing, cfg: BevConfig = DESK_BEV) -> BevObservation:
    """Render the observation for the current tick in the current ego frame."""
    n = cfg.size
    planes = np.zeros((cfg.channels, n, n), dtype=np.uint8)
    _static_planes(world, cfg, planes)
    ego = world.ego
    n_off = len(cfg.offsets)
    base = len(STATIC_CHANNELS)
    index = {kind: base + i * n_off for i, kind in enumerate(DYNAMIC_KINDS)}
    for t, off in enumerate(cfg.offsets):
        snap = history.at(off)
        for channel, x, y, radius in snap.discs:
            _draw_disc(planes[index[channel] + t], ego, x, y, radius, cfg)
        for channel, x, y, heading, half in snap.controls:
            _draw_bar(planes[index[channel] + t], ego, x, y, heading, half, 1.0, cfg)
    return BevObservation(planes.transpose(1, 2, 0), measurement_vector(world, history, cfg))


def measurement_vector(world, history: HistoryRing, cfg: BevConfig = DESK_BEV) -> np.ndarray:
    """(speed, throttle, steer, brake, relative height) for every history offset."""
    out = []
    for off in cfg.offsets:
        snap = history.at(off)
        out += [snap.speed, snap.throttle, snap.steer, snap.brake, 0.0]
    return np.asarray(out, dtype=np.float32)


def write_pgm(path: str, plane: np.ndarray):
    """Binary grayscale P5 image; values in [0, 1] are scaled to 0..255."""
    img = np.clip(np.rint(np.asarray(plane, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a P5 file")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    pixels = np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)
    return pixels.astype(np.float64) / maxval


def dump_frames(frames, out_dir: str, names=None, prefix: str = "frame") -> list[str]:
    """Write every channel of every (C, H, W) frame as a PGM plus ``index.txt``.

    Index lines read ``filename frame channel-name``.
    """
    os.makedirs(out_dir, exist_ok=True)
    frames = [np.asarray(f) for f in frames]
    names = names or channel_names()
    written = []
    lines = []
    for t, frame in enumerate(frames):
        for c in range(frame.shape[0]):
            fname = f"{prefix}{t:03d}_ch{c:02d}.pgm"
            write_pgm(os.path.join(out_dir, fname), frame[c])
            written.append(fname)
            lines.append(f"{fname} {t} {names[c]}")
    with open(os.path.join(out_dir, "index.txt"), "w") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))
    return written
