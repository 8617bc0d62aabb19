"""Planar polyline geometry: arc-length parametrisation and projection."""

from __future__ import annotations

import math

import numpy as np

from .errors import ValidationError


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]; angles already in range come back unchanged."""
    if -math.pi < a <= math.pi:
        return a
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


class Polyline:
    """A piecewise-linear curve with cached arc-length data.

    Lateral coordinates are signed with left of the direction of travel
    positive.
    """

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValidationError("polyline needs at least 2 (x, y) points")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("polyline contains non-finite coordinates")
        seg = np.diff(pts, axis=0)
        lengths = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(lengths <= 1e-9):
            raise ValidationError("polyline contains duplicate consecutive points")
        self.points = pts
        self.seg_len = lengths
        self.dirs = seg / lengths[:, None]
        self.cum = np.concatenate([[0.0], np.cumsum(lengths)])
        self.length = float(self.cum[-1])

    def __len__(self):
        return len(self.points)

    def segment_at(self, s: float) -> int:
        k = int(np.searchsorted(self.cum, s, side="right")) - 1
        return min(max(k, 0), len(self.seg_len) - 1)

    def point_at(self, s: float):
        """Position and heading at arc length ``s`` (clamped to the ends)."""
        s = min(max(s, 0.0), self.length)
        k = self.segment_at(s)
        t = s - self.cum[k]
        d = self.dirs[k]
        p = self.points[k] + t * d
        return float(p[0]), float(p[1]), math.atan2(d[1], d[0])

    def heading_at(self, s: float) -> float:
        d = self.dirs[self.segment_at(min(max(s, 0.0), self.length))]
        return math.atan2(d[1], d[0])

    def project(self, x: float, y: float, hint: float | None = None):
        """Project a point; returns ``(s, lateral, distance)``.

        When several segments are (almost) equally close, the candidate whose
        arc length is nearest ``hint`` wins, which keeps tracking stable on
        routes that come back near themselves.
        """
        p = np.array([x, y])
        rel = p - self.points[:-1]
        t = np.einsum("ij,ij->i", rel, self.dirs)
        tc = np.clip(t, 0.0, self.seg_len)
        closest = self.points[:-1] + tc[:, None] * self.dirs
        dist = np.hypot(*(p - closest).T)
        if hint is None:
            k = int(np.argmin(dist))
        else:
            cand = np.flatnonzero(dist <= dist.min() + 0.5)
            s_cand = self.cum[cand] + tc[cand]
            k = int(cand[np.argmin(np.abs(s_cand - hint))])
        cross = self.dirs[k, 0] * rel[k, 1] - self.dirs[k, 1] * rel[k, 0]
        # beyond the ends the perpendicular distance is measured to the
        # extended end segment so that lateral stays a pure sideways offset
        if (k == 0 and t[k] < 0.0) or (k == len(self.seg_len) - 1 and t[k] > self.seg_len[k]):
            lateral = float(cross)
        else:
            lateral = float(math.copysign(dist[k], cross)) if dist[k] > 0 else 0.0
        s = float(self.cum[k] + tc[k])
        return s, lateral, float(dist[k])

    def frame_coords(self, pts: np.ndarray, max_dist: float | None = None):
        """Vectorised projection of many points.

        Returns ``(s, lateral, inside)`` where ``inside`` is False for points
        that fall before the start or past the end of the curve (flat caps).
        Segments farther than ``max_dist`` from every point are skipped.
        """
        a = self.points[:-1]
        dirs = self.dirs
        lens = self.seg_len
        cum = self.cum[:-1]
        if max_dist is not None and len(a) > 4:
            lo = pts.min(axis=0) - max_dist
            hi = pts.max(axis=0) + max_dist
            b = self.points[1:]
            keep = ~(
                (np.maximum(a[:, 0], b[:, 0]) < lo[0])
                | (np.minimum(a[:, 0], b[:, 0]) > hi[0])
                | (np.maximum(a[:, 1], b[:, 1]) < lo[1])
                | (np.minimum(a[:, 1], b[:, 1]) > hi[1])
            )
            idx = np.flatnonzero(keep)
            if len(idx) == 0:
                n = len(pts)
                return np.zeros(n), np.full(n, np.inf), np.zeros(n, dtype=bool)
        else:
            idx = np.arange(len(a))
        a, dirs, lens, cum = a[idx], dirs[idx], lens[idx], cum[idx]
        rx = pts[:, None, 0] - a[None, :, 0]
        ry = pts[:, None, 1] - a[None, :, 1]
        t = rx * dirs[None, :, 0] + ry * dirs[None, :, 1]
        tc = np.clip(t, 0.0, lens[None, :])
        dx = rx - tc * dirs[None, :, 0]
        dy = ry - tc * dirs[None, :, 1]
        d2 = dx * dx + dy * dy
        k = np.argmin(d2, axis=1)
        rows = np.arange(len(pts))
        cross = dirs[k, 0] * ry[rows, k] - dirs[k, 1] * rx[rows, k]
        dist = np.sqrt(d2[rows, k])
        lateral = np.where(cross >= 0.0, dist, -dist)
        s = cum[k] + tc[rows, k]
        tk = t[rows, k]
        first = idx[k] == 0
        last = idx[k] == len(self.seg_len) - 1
        inside = ~((first & (tk < 0.0)) | (last & (tk > lens[k])))
        return s, lateral, inside

    def sub(self, s0: float, s1: float) -> "Polyline":
        """The piece of the curve between arc lengths ``s0`` and ``s1``."""
        return Polyline(self.sub_points(s0, s1))

    def sub_points(self, s0: float, s1: float) -> np.ndarray:
        s0 = max(0.0, s0)
        s1 = min(self.length, s1)
        inner = [p for p, s in zip(self.points, self.cum) if s0 + 1e-9 < s < s1 - 1e-9]
        start = self.point_at(s0)[:2]
        end = self.point_at(s1)[:2]
        return np.array([start, *inner, end], dtype=np.float64)

    def offset(self, distance: float) -> "Polyline":
        """A parallel curve shifted ``distance`` to the left (vertex normals)."""
        n_seg = np.stack([-self.dirs[:, 1], self.dirs[:, 0]], axis=1)
        normals = np.empty_like(self.points)
        normals[0] = n_seg[0]
        normals[-1] = n_seg[-1]
        if len(n_seg) > 1:
            avg = n_seg[:-1] + n_seg[1:]
            avg /= np.linalg.norm(avg, axis=1, keepdims=True)
            cos_half = np.einsum("ij,ij->i", avg, n_seg[1:])
            normals[1:-1] = avg / np.maximum(cos_half, 0.3)[:, None]
        return Polyline(self.points + distance * normals)


def segment_distance(px, py, ax, ay, bx, by):
    """Distance from points ``(px, py)`` to the segment ``a-b`` (vectorised)."""
    vx, vy = bx - ax, by - ay
    L2 = vx * vx + vy * vy
    t = np.clip(((px - ax) * vx + (py - ay) * vy) / L2, 0.0, 1.0) if L2 > 0 else 0.0
    return np.hypot(px - (ax + t * vx), py - (ay + t * vy))
