"""Driving environments and a pool that resets finished slots in the background.

Route choice happens on the caller's thread when a slot finishes, so it is
reproducible; building the new world and its first raster runs on a worker
thread while the other slots keep stepping.
"""

from __future__ import annotations

import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bev import DESK_BEV, BevConfig, HistoryRing, rasterize
from .reward import total_reward
from .replay import TransitionRecord
from .sim.world import SimConfig, create_world, step


@dataclass
class EpisodeStats:
    route_id: str
    kind: str | None
    density: int
    route_length: float
    steps: int = 0
    ret: float = 0.0
    completion: float = 0.0
    done_reason: str | None = None
    infractions: list = field(default_factory=list)


class DrivingEnv:
    """One world plus its observation history."""

    def __init__(self, bev: BevConfig = DESK_BEV, sim: SimConfig | None = None):
        self.bev = bev
        self.sim = sim or SimConfig()
        self.world = None
        self.history = None
        self.stats: EpisodeStats | None = None
        self.last: TransitionRecord | None = None

    def reset(self, entry, seed: int) -> TransitionRecord:
        self.world = create_world(entry.route, list(entry.scenarios), seed, self.sim)
        self.history = HistoryRing(self.bev.depth)
        self.history.reset(self.world)
        kind = entry.kind.value if entry.kind is not None else None
        self.stats = EpisodeStats(entry.route.id, kind, entry.density, entry.route.length)
        obs = rasterize(self.world, self.history, self.bev)
        self.last = TransitionRecord(obs.chw(), obs.measurements, 0, 0.0, False, True)
        return self.last

    @property
    def done(self) -> bool:
        return self.world is None or self.world.done

    def step(self, action: int) -> TransitionRecord:
        res = step(self.world, int(action))
        self.history.push(self.world)
        obs = rasterize(self.world, self.history, self.bev)
        r = total_reward(res.reward_terms, self.sim.reward)
        st = self.stats
        st.steps += 1
        st.ret += r
        st.completion = res.completion
        st.infractions.extend(res.infractions)
        if res.done:
            st.done_reason = res.done_reason
        self.last = TransitionRecord(obs.chw(), obs.measurements, int(action), r, res.done, False)
        return self.last


class EnvPool:
    """``num_envs`` slots stepped round-robin with background resets.

    ``route_fn(rng, slot) -> BenchmarkRoute`` is called on the caller's thread.
    ``reset_delay`` artificially slows resets (used by stress tests).
    """

    def __init__(self, num_envs: int, route_fn, seed: int = 0, bev: BevConfig = DESK_BEV,
                 sim: SimConfig | None = None, reset_delay: float = 0.0, workers: int | None = None):
        if num_envs < 1:
            raise ValueError("num_envs must be >= 1")
        self.num_envs = num_envs
        self.route_fn = route_fn
        self.seed = seed
        self.reset_delay = reset_delay
        self.envs = [DrivingEnv(bev, sim) for _ in range(num_envs)]
        self.episode_counts = [0] * num_envs
        self.pending: list[Future | None] = [None] * num_envs
        self.executor = ThreadPoolExecutor(max_workers=workers or num_envs, thread_name_prefix="env-reset")
        self.failures: list[str] = []
        self.step_times: list[list[float]] = [[] for _ in range(num_envs)]

    def close(self):
        self.executor.shutdown(wait=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _rng(self, slot: int):
        ss = np.random.SeedSequence([self.seed, slot, self.episode_counts[slot]])
        return np.random.default_rng(ss)

    def _prepare(self, slot: int, entry, world_seed: int):
        if self.reset_delay:
            time.sleep(self.reset_delay)
        return self.envs[slot].reset(entry, world_seed)

    def schedule_reset(self, slot: int, attempts: int = 5):
        """Pick the next route now and build its world in the background."""
        rng = self._rng(slot)
        self.episode_counts[slot] += 1
        entry = self.route_fn(rng, slot)
        world_seed = int(rng.integers(2**31))
        self.pending[slot] = self.executor.submit(self._prepare_retry, slot, entry, world_seed, rng, attempts)

    def _prepare_retry(self, slot, entry, world_seed, rng, attempts):
        for i in range(attempts):
            try:
                return self._prepare(slot, entry, world_seed)
            except Exception as exc:  # construction failure: retry with a new route
                self.failures.append(f"slot {slot}: {entry.route.id}: {exc}")
                if i + 1 == attempts:
                    raise
                entry = self.route_fn(rng, slot)
                world_seed = int(rng.integers(2**31))

    def ready(self, slot: int) -> bool:
        fut = self.pending[slot]
        return fut is None or fut.done()

    def wait(self, slot: int) -> TransitionRecord | None:
        """Block on one slot's reset; returns its first record, if it just reset."""
        fut = self.pending[slot]
        if fut is None:
            return None
        self.pending[slot] = None
        return fut.result()

    def start(self):
        for i in range(self.num_envs):
            if self.pending[i] is None and self.envs[i].done:
                self.schedule_reset(i)
