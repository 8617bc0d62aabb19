"""Collection, world-model and planner updates, curriculum, checkpoints and logs.

One stream owns the parameters: it alternates between stepping the
environment pool with the live policy and running gradient updates. The
replay buffer sits between the two.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
import time

import numpy as np
import torch
import torch.nn.functional as F

from .bev import BevConfig
from .config import TrainConfig
from .envs import DrivingEnv, EnvPool
from .errors import NonFiniteError, ValidationError
from .metrics import EpisodeLog, driving_score, succeeded, write_logs
from .nn.checkpoint import checksum, load_checkpoint, save_checkpoint, state_arrays
from .nn.ops import BucketSpec, unimix_probs
from .planner import Planner, PlannerConfig, reset_planner
from .replay import ReplayBuffer
from .scenarios import Benchmark, BenchmarkConfig, build_benchmark, load_benchmark
from .world_model import LatentState, WorldModel, WorldModelConfig

TRAINLOG_FIELDS = (
    "env-steps", "phase", "episodes", "wm-updates", "planner-updates", "train-ratio",
    "wm-loss", "l-pred", "l-dyn", "l-rep", "bev-loss", "reward-loss", "term-loss",
    "actor-loss", "critic-loss", "return-scale", "entropy", "imag-return",
    "episode-return", "episode-completion", "episode-success",
    "eval-success", "eval-completion", "eval-ds",
)  # fmt: skip


def schedule_train_ratio(step: int, cfg: TrainConfig) -> float:
    """Planner updates per world-model update, linear from start to end over the run."""
    if cfg.total_steps <= 0:
        return cfg.ratio_start
    frac = min(max(step / cfg.total_steps, 0.0), 1.0)
    return cfg.ratio_start + (cfg.ratio_end - cfg.ratio_start) * frac


# models and checkpoints ------------------------------------------------------
def model_meta(wm_cfg: WorldModelConfig, pl_cfg: PlannerConfig) -> dict:
    wm = {f.name: getattr(wm_cfg, f.name) for f in dataclasses.fields(wm_cfg) if f.name not in ("bev", "buckets")}
    pl = {f.name: getattr(pl_cfg, f.name) for f in dataclasses.fields(pl_cfg) if f.name != "buckets"}
    return {
        "world_model": wm,
        "planner": pl,
        "bev": {"size": wm_cfg.bev.size, "meters_per_pixel": wm_cfg.bev.meters_per_pixel,
                "offsets": list(wm_cfg.bev.offsets)},
        "buckets": dataclasses.asdict(wm_cfg.buckets),
    }  # fmt: skip


def build_models(meta: dict) -> tuple[WorldModel, Planner]:
    bev = BevConfig(meta["bev"]["size"], meta["bev"]["meters_per_pixel"], tuple(meta["bev"]["offsets"]))
    buckets = BucketSpec(**meta["buckets"])
    wm_kw = dict(meta["world_model"])
    wm = WorldModel(WorldModelConfig(bev=bev, buckets=buckets, **wm_kw))
    planner = Planner(wm.cfg.feat_size, PlannerConfig(buckets=buckets, **meta["planner"]), wm.cfg.num_actions)
    return wm, planner


def save_agent(path: str, wm: WorldModel, planner: Planner, extra: dict | None = None):
    tensors = {f"world_model.{k}": v for k, v in state_arrays(wm).items()}
    tensors.update({f"planner.{k}": v for k, v in state_arrays(planner).items()})
    meta = {"model": model_meta(wm.cfg, planner.cfg), "return_scale": planner.return_scale}
    meta.update(extra or {})
    save_checkpoint(path, tensors, meta)


def load_agent(path: str) -> tuple[WorldModel, Planner, dict]:
    tensors, meta = load_checkpoint(path)
    if "model" not in meta:
        raise ValidationError(f"{path}: checkpoint carries no model description")
    wm, planner = build_models(meta["model"])
    for prefix, module in (("world_model.", wm), ("planner.", planner)):
        state = {k[len(prefix):]: torch.from_numpy(v.copy()) for k, v in tensors.items() if k.startswith(prefix)}
        try:
            module.load_state_dict(state)
        except RuntimeError as exc:
            raise ValidationError(f"{path}: checkpoint does not match its model description: {exc}") from exc
    planner.return_scale = float(meta.get("return_scale", 0.0))
    return wm, planner, meta


# acting ----------------------------------------------------------------------
class Agent:
    """Filters each slot's observations through the world model and queries the actor.

    A record flagged ``first`` restarts its slot from the initial latent state
    with a zero action, exactly as :meth:`WorldModel.observe` does.
    """

    def __init__(self, wm: WorldModel, planner: Planner, num_slots: int = 1, mode: str = "sample", generator=None):
        self.wm = wm
        self.planner = planner
        self.mode = mode
        self.generator = generator
        init = wm.initial(num_slots)
        self.h = init.h.clone()
        self.z = init.z.clone()

    @torch.no_grad()
    def act(self, slots, records) -> list[int]:
        wm = self.wm
        idx = torch.as_tensor(slots, dtype=torch.long)
        obs = torch.from_numpy(np.stack([r.obs for r in records])).to(torch.float32)
        meas = torch.from_numpy(np.stack([r.meas for r in records])).to(torch.float32)
        first = torch.tensor([r.first for r in records], dtype=torch.float32).unsqueeze(-1)
        prev = torch.tensor([r.prev_action for r in records], dtype=torch.long)
        init = wm.initial(len(slots))
        h = first * init.h + (1.0 - first) * self.h[idx]
        z = first.unsqueeze(-1) * init.z + (1.0 - first.unsqueeze(-1)) * self.z[idx]
        onehot = F.one_hot(prev, wm.cfg.num_actions).to(h.dtype) * (1.0 - first)
        h = wm.sequence_step(h, z, onehot)
        if self.mode == "greedy":
            logits = wm.posterior(torch.cat([h, wm.embed(obs, meas)], dim=-1))
            probs = unimix_probs(logits.reshape(len(slots), wm.cfg.groups, wm.cfg.classes), wm.cfg.unimix)
            z = F.one_hot(probs.argmax(-1), wm.cfg.classes).to(h.dtype)
        else:
            _, z = wm.encode(obs, meas, h, self.generator)
        self.h[idx] = h
        self.z[idx] = z
        actions = self.planner.act(LatentState(h, z), self.mode, self.generator)
        return [int(a) for a in actions]


class AgentController:
    """Single-environment wrapper used by :func:`evaluate`."""

    def __init__(self, wm, planner, mode: str = "greedy", generator=None):
        self.agent = Agent(wm, planner, 1, mode, generator)

    def reset(self, world):
        pass

    def __call__(self, record, world) -> int:
        return self.agent.act([0], [record])[0]


class ScriptedController:
    """Adapts a policy that reads the simulator state directly."""

    def __init__(self, policy):
        self.policy = policy

    def reset(self, world):
        self.policy.reset(world)

    def __call__(self, record, world) -> int:
        return self.policy(world)


def episode_log(stats) -> EpisodeLog:
    return EpisodeLog(
        route_id=stats.route_id,
        kind=stats.kind,
        completion=min(max(float(stats.completion), 0.0), 1.0),
        infractions=list(stats.infractions),
        route_length=float(stats.route_length),
        density=int(stats.density),
        done_reason=stats.done_reason,
        steps=int(stats.steps),
        ret=float(stats.ret),
    )


def route_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0] % (2**31))


def evaluate(controller, routes, seed: int = 0, bev: BevConfig | None = None, sim=None) -> list[EpisodeLog]:
    """Run each route once, in order, and return one log per route."""
    logs = []
    env = DrivingEnv(bev, sim) if bev is not None else DrivingEnv(sim=sim)
    for i, entry in enumerate(routes):
        rec = env.reset(entry, route_seed(seed, i))
        controller.reset(env.world)
        while not env.done:
            rec = env.step(controller(rec, env.world))
        logs.append(episode_log(env.stats))
    return logs


def collect(pool: EnvPool, agent: Agent, replay: ReplayBuffer, steps, on_episode=None) -> int:
    """Step every slot ``steps`` times (an int or one count per slot).

    A slot whose next world is still being built is skipped while any other
    slot can step; only when nothing else is runnable does collection block
    on it. Finished worlds are replaced in the background immediately.
    Returns the number of transitions appended.
    """
    n = pool.num_envs
    remaining = list(steps) if isinstance(steps, (list, tuple)) else [int(steps)] * n
    pool.start()
    added = 0
    while any(remaining):
        active, records = [], []
        for i in range(n):
            if remaining[i] <= 0:
                continue
            if pool.pending[i] is not None:
                if not pool.ready(i) and n > 1:
                    continue
                rec = pool.wait(i)
                replay.extend(i, [rec])
            active.append(i)
            records.append(pool.envs[i].last)
        if not active:
            waiting = [i for i in range(n) if remaining[i] > 0]
            rec = pool.wait(waiting[0])
            replay.extend(waiting[0], [rec])
            continue
        actions = agent.act(active, records)
        for i, a in zip(active, actions):
            env = pool.envs[i]
            rec = env.step(a)
            pool.step_times[i].append(time.monotonic())
            replay.extend(i, [rec])
            remaining[i] -= 1
            added += 1
            if rec.done:
                if on_episode is not None:
                    on_episode(i, env)
                pool.schedule_reset(i)
    return added


# training ----------------------------------------------------------------------
def _fmt(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x)) if isinstance(x, float) else str(x)


class _Mean:
    def __init__(self):
        self.sums: dict = {}
        self.counts: dict = {}

    def add(self, key, value):
        self.sums[key] = self.sums.get(key, 0.0) + float(value)
        self.counts[key] = self.counts.get(key, 0) + 1

    def get(self, key):
        return self.sums[key] / self.counts[key] if self.counts.get(key) else None


class Trainer:
    """Owns models, optimisers, replay and the curriculum state of one run."""

    def __init__(self, cfg: TrainConfig, out_dir: str, benchmark: Benchmark | None = None):
        self.cfg = cfg
        self.out = out_dir
        os.makedirs(out_dir, exist_ok=True)
        torch.set_num_threads(max(1, cfg.threads))
        torch.manual_seed(cfg.seed)
        if benchmark is None:
            if cfg.benchmark:
                benchmark = load_benchmark(cfg.benchmark)
            else:
                benchmark = build_benchmark(cfg.benchmark_config or _default_benchmark(cfg))
        self.benchmark = benchmark
        self.all_routes = list(benchmark.train)
        self.warmup_routes = [r for r in self.all_routes if r.kind is not None and r.kind.value in cfg.warmup_kinds]
        if not self.all_routes:
            raise ValidationError("benchmark has no training routes")
        if cfg.warmup_fraction > 0 and not self.warmup_routes:
            raise ValidationError(f"no training routes of the warm-up kinds {list(cfg.warmup_kinds)}")
        self.wm = WorldModel(dataclasses.replace(cfg.world_model, bev=cfg.bev))
        self.planner = Planner(self.wm.cfg.feat_size, cfg.planner, self.wm.cfg.num_actions)
        self.wm_opt = torch.optim.Adam(self.wm.parameters(), lr=cfg.world_model_lr, eps=1e-8)
        self._make_planner_opts()
        self.replay = ReplayBuffer(cfg.capacity)
        self.np_rng = np.random.default_rng([cfg.seed, 1])
        self.collect_gen = torch.Generator().manual_seed(cfg.seed * 2 + 1)
        self.train_gen = torch.Generator().manual_seed(cfg.seed * 2 + 2)
        self.env_steps = 0
        self.wm_updates = 0
        self.planner_updates = 0
        self.credit = 0.0
        self.reset_done = False
        self.episodes = 0
        self.route_log: list[tuple] = []  # (env steps when chosen, slot, route id, kind, phase)
        self.train_logs: list[EpisodeLog] = []
        self.rows: list[dict] = []
        self.last_batch = None

    def _make_planner_opts(self):
        c = self.cfg
        self.actor_opt = torch.optim.Adam(self.planner.actor.parameters(), lr=c.actor_lr, eps=1e-5)
        self.critic_opt = torch.optim.Adam(self.planner.critic.parameters(), lr=c.critic_lr, eps=1e-5)

    # curriculum --------------------------------------------------------------
    @property
    def phase(self) -> str:
        return "warmup" if self.env_steps < self.cfg.warmup_fraction * self.cfg.total_steps else "main"

    def pick_route(self, rng, slot):
        """Training route for ``slot``, restricted to the warm-up kinds early on."""
        phase = self.phase
        pool = self.warmup_routes if phase == "warmup" else self.all_routes
        entry = pool[int(rng.integers(len(pool)))]
        kind = entry.kind.value if entry.kind is not None else ""
        self.route_log.append((self.env_steps, slot, entry.route.id, kind, phase))
        return entry

    # updates -------------------------------------------------------------------
    def _step(self, opt, loss, params):
        opt.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(params, self.cfg.grad_clip)
        opt.step()

    def train_iteration(self, stats: _Mean):
        cfg = self.cfg
        batch = self.replay.sample(cfg.batch, cfg.seq_len, self.np_rng)
        self.last_batch = batch
        report = self.wm.loss(batch, self.train_gen)
        self._step(self.wm_opt, report.total, list(self.wm.parameters()))
        self.wm_updates += 1
        for key, value in (("wm-loss", report.total), ("l-pred", report.l_pred), ("l-dyn", report.l_dyn),
                           ("l-rep", report.l_rep)):  # fmt: skip
            stats.add(key, value.detach())
        stats.add("bev-loss", report.parts["bev"])
        stats.add("reward-loss", report.parts["reward"])
        stats.add("term-loss", report.parts["term"])

        self.credit += schedule_train_ratio(self.env_steps, cfg)
        n_planner = int(math.floor(self.credit + 1e-9))
        self.credit -= n_planner
        valid = batch.mask.reshape(-1)
        starts = report.posterior.detach().reshape(-1)
        starts = LatentState(starts.h[valid], starts.z[valid])
        for _ in range(n_planner):
            a_loss, c_loss, pst = self.planner.losses(self.wm, starts, self.train_gen)
            self._step(self.actor_opt, a_loss, list(self.planner.actor.parameters()))
            self._step(self.critic_opt, c_loss, list(self.planner.critic.parameters()))
            self.planner.update_slow_critic()
            self.planner_updates += 1
            stats.add("actor-loss", pst["actor_loss"])
            stats.add("critic-loss", pst["critic_loss"])
            stats.add("entropy", pst["entropy"])
            stats.add("imag-return", pst["return_mean"])

    def maybe_reset(self):
        cfg = self.cfg
        if cfg.planner_reset and not self.reset_done and self.env_steps >= cfg.reset_fraction * cfg.total_steps:
            reset_planner(self.planner, cfg.seed + 7919)
            self._make_planner_opts()
            self.reset_done = True

    # checkpoints ---------------------------------------------------------------
    def checkpoint_path(self, steps=None):
        return os.path.join(self.out, f"ckpt-{self.env_steps if steps is None else steps:09d}.t2d")

    def save(self, path=None):
        path = path or self.checkpoint_path()
        save_agent(path, self.wm, self.planner, {
            "env_steps": self.env_steps, "wm_updates": self.wm_updates,
            "planner_updates": self.planner_updates, "credit": self.credit,
            "reset_done": self.reset_done, "episodes": self.episodes, "seed": self.cfg.seed,
        })  # fmt: skip
        return path

    def resume(self, path: str):
        wm, planner, meta = load_agent(path)
        try:
            self.wm.load_state_dict(wm.state_dict())
            self.planner.load_state_dict(planner.state_dict())
        except RuntimeError as exc:
            raise ValidationError(f"{path}: checkpoint does not match the configured model: {exc}") from exc
        self.planner.return_scale = planner.return_scale
        self.env_steps = int(meta.get("env_steps", 0))
        self.wm_updates = int(meta.get("wm_updates", 0))
        self.planner_updates = int(meta.get("planner_updates", 0))
        self.credit = float(meta.get("credit", 0.0))
        self.reset_done = bool(meta.get("reset_done", False))
        self.episodes = int(meta.get("episodes", 0))
        # continue the random streams at a point that depends on where we resumed
        self.np_rng = np.random.default_rng([self.cfg.seed, 1, self.env_steps])
        self.collect_gen.manual_seed(self.cfg.seed * 2 + 1 + 1_000_003 * self.env_steps)
        self.train_gen.manual_seed(self.cfg.seed * 2 + 2 + 1_000_003 * self.env_steps)

    def dump_diagnostic(self, exc: Exception) -> str:
        d = os.path.join(self.out, "diagnostic")
        os.makedirs(d, exist_ok=True)
        if self.last_batch is not None:
            b = self.last_batch
            np.savez_compressed(
                os.path.join(d, "last_batch.npz"),
                obs=b.obs.numpy().astype(np.uint8), meas=b.meas.numpy(), prev_action=b.prev_action.numpy(),
                reward=b.reward.numpy(), done=b.done.numpy(), first=b.first.numpy(), mask=b.mask.numpy(),
            )  # fmt: skip
        info = {
            "error": str(exc),
            "env_steps": self.env_steps,
            "world_model_checksum": checksum(self.wm),
            "planner_checksum": checksum(self.planner),
            "world_model_params": {n: checksum_tensor(p) for n, p in self.wm.named_parameters()},
            "planner_params": {n: checksum_tensor(p) for n, p in self.planner.named_parameters()},
        }
        with open(os.path.join(d, "checksums.json"), "w") as fh:
            json.dump(info, fh, indent=1, sort_keys=True)
        return d

    # main loop -------------------------------------------------------------------
    def _write_row(self, writer, fh, stats: _Mean, ep: _Mean, eval_row):
        row = {
            "env-steps": self.env_steps, "phase": self.phase, "episodes": self.episodes,
            "wm-updates": self.wm_updates, "planner-updates": self.planner_updates,
            "train-ratio": schedule_train_ratio(self.env_steps, self.cfg),
            "return-scale": float(self.planner.return_scale),
        }  # fmt: skip
        for k in ("wm-loss", "l-pred", "l-dyn", "l-rep", "bev-loss", "reward-loss", "term-loss",
                  "actor-loss", "critic-loss", "entropy", "imag-return"):  # fmt: skip
            row[k] = stats.get(k)
        row["episode-return"] = ep.get("return")
        row["episode-completion"] = ep.get("completion")
        row["episode-success"] = ep.get("success")
        row.update(eval_row or {})
        self.rows.append(row)
        writer.writerow([_fmt(row.get(k)) for k in TRAINLOG_FIELDS])
        fh.flush()

    def evaluate_now(self) -> dict:
        routes = list(self.benchmark.eval)
        if self.cfg.eval_routes:
            routes = routes[: self.cfg.eval_routes]
        if not routes:
            return {}
        ctl = AgentController(self.wm, self.planner, "greedy")
        logs = evaluate(ctl, routes, self.cfg.seed, self.cfg.bev, self.cfg.sim)
        n = len(logs)
        return {
            "eval-success": sum(succeeded(l) for l in logs) / n,
            "eval-completion": sum(l.completion for l in logs) / n,
            "eval-ds": sum(driving_score(l) for l in logs) / n,
        }

    def run(self, resume: str | None = None, progress=None) -> str:
        """Train to ``total-steps``; returns the path of the TrainLog."""
        cfg = self.cfg
        if resume:
            self.resume(resume)
        log_path = os.path.join(self.out, "trainlog.csv")
        fresh = not resume or not os.path.exists(log_path)
        fh = open(log_path, "w" if fresh else "a", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        if fresh:
            writer.writerow(TRAINLOG_FIELDS)
            fh.flush()
        if self.env_steps == 0:
            self.save()
        stats, ep = _Mean(), _Mean()
        next_log = (self.env_steps // cfg.log_interval + 1) * cfg.log_interval
        next_ckpt = (self.env_steps // cfg.checkpoint_interval + 1) * cfg.checkpoint_interval if cfg.checkpoint_interval else None
        next_eval = (self.env_steps // cfg.eval_interval + 1) * cfg.eval_interval if cfg.eval_interval else None

        def on_episode(slot, env):
            log = episode_log(env.stats)
            self.episodes += 1
            self.train_logs.append(log)
            ep.add("return", log.ret)
            ep.add("completion", log.completion)
            ep.add("success", float(succeeded(log)))

        agent = Agent(self.wm, self.planner, cfg.num_envs, "sample", self.collect_gen)
        pool = EnvPool(cfg.num_envs, self.pick_route, cfg.seed + 1_000_003 * self.env_steps, cfg.bev, cfg.sim)
        try:
            while self.env_steps < cfg.total_steps:
                remaining = cfg.total_steps - self.env_steps
                per_iter = min(cfg.train_every, remaining)
                counts = [per_iter // cfg.num_envs + (1 if i < per_iter % cfg.num_envs else 0) for i in range(cfg.num_envs)]
                self.env_steps += collect(pool, agent, self.replay, counts, on_episode)
                self.maybe_reset()
                if self.replay.transitions >= min(cfg.prefill, cfg.total_steps):
                    try:
                        self.train_iteration(stats)
                    except NonFiniteError as exc:
                        where = self.dump_diagnostic(exc)
                        raise NonFiniteError(exc.field, f"diagnostic dump in {where}") from exc
                eval_row = None
                if next_eval is not None and self.env_steps >= next_eval:
                    eval_row = self.evaluate_now()
                    next_eval += cfg.eval_interval
                if self.env_steps >= next_log or self.env_steps >= cfg.total_steps or eval_row:
                    self._write_row(writer, fh, stats, ep, eval_row)
                    stats, ep = _Mean(), _Mean()
                    while next_log <= self.env_steps:
                        next_log += cfg.log_interval
                if next_ckpt is not None and self.env_steps >= next_ckpt:
                    self.save()
                    while next_ckpt <= self.env_steps:
                        next_ckpt += cfg.checkpoint_interval
                if progress is not None:
                    progress(self)
            if cfg.total_steps > 0:
                self.save(os.path.join(self.out, "final.t2d"))
        finally:
            pool.close()
            fh.close()
            write_logs(os.path.join(self.out, "train_episodes.jsonl"), self.train_logs)
            with open(os.path.join(self.out, "routes.csv"), "w", newline="") as rf:
                w = csv.writer(rf, lineterminator="\n")
                w.writerow(["env-steps", "slot", "route-id", "kind", "phase"])
                w.writerows(self.route_log)
        return log_path


def checksum_tensor(t) -> str:
    return hashlib.sha256(t.detach().cpu().numpy().tobytes()).hexdigest()[:16]


def _default_benchmark(cfg: TrainConfig):
    return BenchmarkConfig(seed=cfg.seed)


def train(cfg: TrainConfig, out_dir: str, resume: str | None = None, benchmark: Benchmark | None = None) -> Trainer:
    trainer = Trainer(cfg, out_dir, benchmark)
    trainer.run(resume)
    return trainer


@torch.no_grad()
def dream(wm: WorldModel, planner: Planner, entry, frames: int, context: int = 5, seed: int = 0, sim=None):
    """Filter ``context`` real frames under the greedy policy, then imagine ``frames`` more.

    Returns ``(real, imagined)``: lists of ``(C, H, W)`` arrays, the imagined
    ones holding decoded per-pixel probabilities.
    """
    if frames < 1:
        raise ValidationError("frames must be >= 1")
    if context < 1:
        raise ValidationError("context must be >= 1")
    env = DrivingEnv(wm.cfg.bev, sim)
    agent = Agent(wm, planner, 1, "greedy")
    rec = env.reset(entry, route_seed(seed, 0))
    real = []
    for t in range(context):
        real.append(rec.obs)
        action = agent.act([0], [rec])[0]
        if t + 1 < context:
            if env.done:
                raise ValidationError(f"episode ended after {t + 1} of {context} context frames")
            rec = env.step(action)
    state = LatentState(agent.h[:1].clone(), agent.z[:1].clone())
    imagined = []
    for _ in range(frames):
        action = planner.act(state, "greedy")
        state, _, _, recon = wm.predict_next(state, action, mode=True)
        imagined.append(recon[0].numpy())
    return real, imagined
