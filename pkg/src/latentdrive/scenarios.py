"""Route splitting, scenario placement and benchmark generation.

Long random routes are cut into short pieces, and every piece is offered
to the scenario archetypes whose road-situation requirement it satisfies.
Each benchmark route carries at most one scenario kind.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import PlacementError, ValidationError
from .routes import PARAM_RANGES, RouteSpec, ScenarioInstance, ScenarioKind, TrafficControlSpec

MIN_SPACING = 50.0
ANCHOR_GRID = 1.0
JUNCTION_MARGIN = 6.0
BENCHMARK_FILE = "benchmark.json"


def split_route(route: RouteSpec, max_len: float) -> list[RouteSpec]:
    """Cut ``route`` into consecutive pieces no longer than ``max_len``.

    A route of exactly ``max_len`` stays whole. Pieces have equal length
    unless a cut would land inside a junction, in which case it slides to
    just before the junction when that keeps both neighbours short enough.
    """
    if not max_len > 0:
        raise ValidationError("max_len must be > 0")
    length = route.length
    if length <= max_len:
        return [route]
    n = math.ceil(length / max_len)
    cuts = [length * k / n for k in range(1, n)]
    for i, c in enumerate(cuts):
        for j in route.junctions:
            if j.s_start - JUNCTION_MARGIN < c < j.s_end + JUNCTION_MARGIN:
                prev = cuts[i - 1] if i else 0.0
                nxt = cuts[i + 1] if i + 1 < len(cuts) else length
                for alt in (j.s_start - JUNCTION_MARGIN, j.s_end + JUNCTION_MARGIN):
                    if alt - prev <= max_len and nxt - alt <= max_len and prev < alt < nxt:
                        cuts[i] = alt
                        break
    bounds = [0.0, *cuts, length]
    line = route.polyline
    pieces = []
    for k, (s0, s1) in enumerate(zip(bounds[:-1], bounds[1:])):
        pts = line.sub_points(s0, s1)
        controls = tuple(
            TrafficControlSpec(c.kind, c.distance - s0, c.red_time, c.green_time)
            for c in route.controls
            if s0 <= c.distance < s1 or (k == n - 1 and c.distance == s1)
        )
        pieces.append(
            RouteSpec(
                id=f"{route.id}-{k}",
                waypoints=tuple((float(x), float(y)) for x, y in pts),
                lane_width=route.lane_width,
                controls=controls,
                lanes=route.lanes,
                two_way=route.two_way,
            )
        )
    return pieces


def candidate_anchors(route: RouteSpec, kind: ScenarioKind) -> np.ndarray:
    """Every arc length where ``kind`` fits the road situation of ``route``."""
    req = kind.requirement
    if req.two_way and not route.two_way:
        return np.empty(0)
    if req.multi_lane and route.lanes < 2:
        return np.empty(0)
    length = route.length
    if req.situation == "straight":
        out = []
        for a, b in route.straight_zones():
            lo, hi = a + req.before, b - req.after
            if hi >= lo:
                out.append(np.arange(math.ceil(lo / ANCHOR_GRID), math.floor(hi / ANCHOR_GRID) + 1) * ANCHOR_GRID)
        return np.concatenate(out) if out else np.empty(0)
    side = req.situation.partition("-")[2]
    anchors = [
        j.s_start
        for j in route.junctions
        if (not side or j.side == side) and j.s_start - req.before >= 0.0 and j.s_start + req.after <= length
    ]
    return np.asarray(anchors, dtype=np.float64)


def draw_params(kind: ScenarioKind, rng) -> dict:
    """Uniform draw of every kind-specific parameter within its legal range."""
    out = {}
    for name, (lo, hi) in sorted(PARAM_RANGES[kind].items()):
        out[name] = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    for a, b in (("flow-speed-min", "flow-speed-max"), ("interval-min", "interval-max")):
        if a in out and out[a] > out[b]:
            out[a], out[b] = out[b], out[a]
    if "bicycle" in out:
        out["bicycle"] = float(out["bicycle"] >= 0.5)
    return out


def place_scenarios(route: RouteSpec, kinds, rng, spacing: float = MIN_SPACING) -> list[ScenarioInstance]:
    """Anchor one instance per requested kind, at least ``spacing`` apart.

    Raises :class:`PlacementError` naming every kind that found no room.
    """
    placed = []
    failed = []
    for kind in kinds:
        kind = ScenarioKind(kind)
        cand = candidate_anchors(route, kind)
        if placed:
            taken = np.array([p.anchor_distance for p in placed])
            cand = cand[np.all(np.abs(cand[:, None] - taken[None, :]) >= spacing, axis=1)]
        if len(cand) == 0:
            failed.append(kind)
            continue
        anchor = float(cand[int(rng.integers(len(cand)))])
        inst = ScenarioInstance(kind, anchor, draw_params(kind, rng))
        inst.validate(route)
        placed.append(inst)
    if failed:
        raise PlacementError(failed)
    return placed


def random_route(rng, route_id: str, length: float, lane_width=3.5, lanes=1, two_way=False, turns=None) -> RouteSpec:
    """A random walk of straight legs joined by rounded right-angle turns.

    ``turns`` forces the sequence of turn sides (+1 left, -1 right); when it
    is None the sides are random.
    """
    heading = float(rng.uniform(-math.pi, math.pi))
    pos = np.zeros(2)
    pts = [pos.copy()]
    travelled = 0.0
    radius = 10.0
    turns = list(turns or [])
    i = 0
    while travelled < length:
        leg = float(rng.uniform(70.0, 160.0))
        leg = min(leg, length - travelled) if travelled + leg > length - 20.0 else leg
        pos = pos + leg * np.array([math.cos(heading), math.sin(heading)])
        pts.append(pos.copy())
        travelled += leg
        if travelled >= length - 1e-9:
            break
        side = turns[i] if i < len(turns) else (1.0 if rng.random() < 0.5 else -1.0)
        i += 1
        # arc of a quarter circle, sampled every 15 degrees
        centre = pos + side * radius * np.array([-math.sin(heading), math.cos(heading)])
        start = heading - side * math.pi / 2
        for k in range(1, 7):
            ang = start + side * k * math.pi / 12
            pts.append(centre + radius * np.array([math.cos(ang), math.sin(ang)]))
        heading = heading + side * math.pi / 2
        pos = pts[-1].copy()
        travelled += radius * math.pi / 2
    wp = tuple((round(float(x), 6), round(float(y), 6)) for x, y in pts)
    return RouteSpec(route_id, wp, lane_width, (), lanes, two_way)


@dataclass(frozen=True)
class BenchmarkRoute:
    route: RouteSpec
    kind: ScenarioKind | None  # None for a plain route without scenarios
    scenarios: tuple[ScenarioInstance, ...] = ()

    @property
    def density(self) -> int:
        return len(self.scenarios)

    def to_dict(self):
        return {
            "route": self.route.to_dict(),
            "kind": None if self.kind is None else self.kind.value,
            "scenarios": [s.to_dict() for s in self.scenarios],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            route = RouteSpec.from_dict(d["route"])
            kind = None if d.get("kind") is None else ScenarioKind(d["kind"])
            scen = tuple(ScenarioInstance.from_dict(s) for s in d.get("scenarios", []))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"malformed benchmark route: {exc}") from exc
        for s in scen:
            s.validate(route)
        return cls(route, kind, scen)


@dataclass
class BenchmarkConfig:
    kinds: tuple = tuple(ScenarioKind)
    train_per_kind: int = 40
    plain: int = 40
    eval_per_kind: int = 10
    max_len: float = 300.0
    lane_width: float = 3.5
    seed: int = 0

    def __post_init__(self):
        self.kinds = tuple(ScenarioKind(k) for k in self.kinds)
        if min(self.train_per_kind, self.plain, self.eval_per_kind) < 0:
            raise ValidationError("route counts must be >= 0")
        if self.max_len <= 0:
            raise ValidationError("max-len must be > 0")

    @classmethod
    def from_dict(cls, d: dict):
        known = {"kinds", "train-per-kind", "plain", "eval-per-kind", "max-len", "lane-width", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown benchmark config keys: {sorted(unknown)}")
        try:
            return cls(
                kinds=tuple(d.get("kinds", [k.value for k in ScenarioKind])),
                train_per_kind=int(d.get("train-per-kind", 40)),
                plain=int(d.get("plain", 40)),
                eval_per_kind=int(d.get("eval-per-kind", 10)),
                max_len=float(d.get("max-len", 300.0)),
                lane_width=float(d.get("lane-width", 3.5)),
                seed=int(d.get("seed", 0)),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"bad benchmark config: {exc}") from exc


@dataclass
class Benchmark:
    train: list[BenchmarkRoute] = field(default_factory=list)
    eval: list[BenchmarkRoute] = field(default_factory=list)

    def routes(self, split: str = "eval", kinds=None):
        pool = self.train if split == "train" else self.eval
        if kinds is None:
            return list(pool)
        wanted = {None if k is None else ScenarioKind(k) for k in kinds}
        return [r for r in pool if r.kind in wanted]

    def to_dict(self):
        return {"train": [r.to_dict() for r in self.train], "eval": [r.to_dict() for r in self.eval]}

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ValidationError("benchmark document must be a mapping")
        bench = cls(
            [BenchmarkRoute.from_dict(r) for r in d.get("train", [])],
            [BenchmarkRoute.from_dict(r) for r in d.get("eval", [])],
        )
        ids_train = {r.route.id for r in bench.train}
        ids_eval = {r.route.id for r in bench.eval}
        if ids_train & ids_eval:
            raise ValidationError(f"train/eval route ids overlap: {sorted(ids_train & ids_eval)[:5]}")
        return bench


def _layout_for(kind: ScenarioKind | None, rng):
    if kind is None:
        return 1, bool(rng.random() < 0.5), None
    req = kind.requirement
    lanes = 2 if req.multi_lane else 1
    two_way = req.two_way or bool(rng.random() < 0.5)
    turns = None
    if req.situation == "junction-left":
        turns = [1.0, 1.0]
    elif req.situation == "junction-right":
        turns = [-1.0, -1.0]
    return lanes, two_way, turns


def make_route(kind: ScenarioKind | None, route_id: str, rng, cfg: BenchmarkConfig, attempts: int = 50) -> BenchmarkRoute:
    """Generate a long route, split it and keep the first piece that hosts ``kind``."""
    for _ in range(attempts):
        lanes, two_way, turns = _layout_for(kind, rng)
        total = float(rng.uniform(2.0, 3.0)) * cfg.max_len
        long_route = random_route(rng, route_id, total, cfg.lane_width, lanes, two_way, turns)
        pieces = split_route(long_route, cfg.max_len)
        order = rng.permutation(len(pieces))
        for k in order:
            piece = pieces[int(k)]
            piece = RouteSpec(route_id, piece.waypoints, piece.lane_width, piece.controls, piece.lanes, piece.two_way)
            if kind is None:
                return BenchmarkRoute(piece, None, ())
            try:
                inst = place_scenarios(piece, [kind], rng)
            except PlacementError:
                continue
            return BenchmarkRoute(piece, kind, tuple(inst))
    raise PlacementError([kind])


def build_benchmark(cfg: BenchmarkConfig) -> Benchmark:
    """Single-scenario training and evaluation routes with disjoint ids."""
    rng = np.random.default_rng(cfg.seed)
    bench = Benchmark()
    for kind in cfg.kinds:
        for i in range(cfg.train_per_kind):
            bench.train.append(make_route(kind, f"train-{kind.value}-{i:03d}", rng, cfg))
    for i in range(cfg.plain):
        bench.train.append(make_route(None, f"train-plain-{i:03d}", rng, cfg))
    for kind in cfg.kinds:
        for i in range(cfg.eval_per_kind):
            bench.eval.append(make_route(kind, f"eval-{kind.value}-{i:03d}", rng, cfg))
    return bench


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def write_benchmark(bench: Benchmark, out_dir: str) -> list[str]:
    """Write ``benchmark.json`` plus one file per route under ``routes/``."""
    os.makedirs(os.path.join(out_dir, "routes"), exist_ok=True)
    written = []
    path = os.path.join(out_dir, BENCHMARK_FILE)
    with open(path, "w") as fh:
        fh.write(_dump(bench.to_dict()))
    written.append(path)
    for r in bench.train + bench.eval:
        p = os.path.join(out_dir, "routes", f"{r.route.id}.json")
        with open(p, "w") as fh:
            fh.write(_dump(r.to_dict()))
        written.append(p)
    return written


def load_benchmark(path: str) -> Benchmark:
    """Read a benchmark from its document or from the directory holding it."""
    if os.path.isdir(path):
        path = os.path.join(path, BENCHMARK_FILE)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not a valid benchmark document ({exc})") from exc
    return Benchmark.from_dict(doc)


def load_route(path: str) -> BenchmarkRoute:
    """Read a single route file; a bare RouteSpec document is also accepted."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not a valid route document ({exc})") from exc
    if isinstance(doc, dict) and "route" in doc:
        return BenchmarkRoute.from_dict(doc)
    return BenchmarkRoute(RouteSpec.from_dict(doc), None, ())
